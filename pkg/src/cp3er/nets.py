"""Networks and parameter lifecycle: MLP trunks, the pixel encoder, EMA targets."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ndgrad as nd

ParamSet = dict[str, nd.Tensor]

RELU_GAIN = float(np.sqrt(2.0))


def orthogonal(rng: np.random.Generator, rows: int, cols: int, gain: float = 1.0) -> np.ndarray:
    """Orthogonal matrix of shape ``(rows, cols)`` scaled by ``gain``."""
    a = rng.normal(size=(max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q *= np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return np.ascontiguousarray(gain * q[:rows, :cols])


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    output_dim: int
    hidden_dim: int = 1024
    num_hidden_layers: int = 2
    final_activation: str | None = None

    def __post_init__(self):
        if min(self.input_dim, self.output_dim, self.hidden_dim) < 1 or self.num_hidden_layers < 0:
            raise ValueError(f"invalid MlpSpec {self}")
        if self.final_activation not in (None, "tanh"):
            raise ValueError(f"unknown final activation {self.final_activation!r}")

    def layer_dims(self) -> list[tuple[int, int]]:
        dims = [self.input_dim] + [self.hidden_dim] * self.num_hidden_layers + [self.output_dim]
        return list(zip(dims[:-1], dims[1:]))

    def param_count(self) -> int:
        return sum((i + 1) * o for i, o in self.layer_dims())


def init_mlp(spec: MlpSpec, rng: np.random.Generator, zero_final: bool = False) -> ParamSet:
    params: ParamSet = {}
    layers = spec.layer_dims()
    for i, (fan_in, fan_out) in enumerate(layers):
        final = i == len(layers) - 1
        if final and zero_final:
            w = np.zeros((fan_in, fan_out))
        else:
            w = orthogonal(rng, fan_in, fan_out, 1.0 if final else RELU_GAIN)
        params[f"l{i}.w"] = nd.parameter(w, name=f"l{i}.w")
        params[f"l{i}.b"] = nd.parameter(np.zeros(fan_out), name=f"l{i}.b")
    return params


def mlp_forward(spec: MlpSpec, params: ParamSet, x: nd.Tensor, capture: list | None = None) -> nd.Tensor:
    """Run the MLP; post-relu hidden activations are appended to ``capture``."""
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise nd.ShapeError(f"mlp expects [batch, {spec.input_dim}], got {x.shape}")
    h = x
    n = len(spec.layer_dims())
    for i in range(n):
        h = nd.linear(h, params[f"l{i}.w"], params[f"l{i}.b"])
        if i < n - 1:
            h = nd.relu(h)
            if capture is not None:
                capture.append(h.data)
    if spec.final_activation == "tanh":
        h = nd.tanh(h)
    return h


class Mlp:
    """An :class:`MlpSpec` bound to its parameters."""

    def __init__(
        self,
        spec: MlpSpec,
        rng: np.random.Generator | None = None,
        params: ParamSet | None = None,
        zero_final: bool = False,
    ):
        self.spec = spec
        if params is None:
            if rng is None:
                raise ValueError("need a seeded rng or explicit params")
            params = init_mlp(spec, rng, zero_final)
        self.params = params

    def __call__(self, x: nd.Tensor, capture: list | None = None) -> nd.Tensor:
        return mlp_forward(self.spec, self.params, x, capture)

    def parameters(self) -> list[nd.Tensor]:
        return list(self.params.values())


@dataclass(frozen=True)
class ConvEncoderSpec:
    input_shape: tuple[int, int, int] = (3, 32, 32)
    stages: tuple[tuple[int, int, int], ...] = ((16, 3, 2), (32, 3, 2))
    feature_dim: int = 50

    def spatial_sizes(self) -> list[tuple[int, int, int]]:
        c, h, w = self.input_shape
        out = []
        for co, k, s in self.stages:
            h, w = (h - k) // s + 1, (w - k) // s + 1
            if h < 1 or w < 1:
                raise ValueError(f"encoder stage ({co}, {k}, {s}) collapses input {self.input_shape}")
            out.append((co, h, w))
        return out

    def flat_dim(self) -> int:
        c, h, w = self.spatial_sizes()[-1]
        return c * h * w


def init_encoder(spec: ConvEncoderSpec, rng: np.random.Generator) -> ParamSet:
    params: ParamSet = {}
    cin = spec.input_shape[0]
    spec.spatial_sizes()
    for i, (co, k, _) in enumerate(spec.stages):
        w = orthogonal(rng, co, cin * k * k, RELU_GAIN).reshape(co, cin, k, k)
        params[f"c{i}.w"] = nd.parameter(w, name=f"c{i}.w")
        params[f"c{i}.b"] = nd.parameter(np.zeros(co), name=f"c{i}.b")
        cin = co
    params["proj.w"] = nd.parameter(orthogonal(rng, spec.flat_dim(), spec.feature_dim), name="proj.w")
    params["proj.b"] = nd.parameter(np.zeros(spec.feature_dim), name="proj.b")
    return params


def encoder_forward(spec: ConvEncoderSpec, params: ParamSet, frames: nd.Tensor) -> nd.Tensor:
    """Map ``[B, C, H, W]`` frames to tanh-bounded ``[B, feature_dim]`` features."""
    if frames.ndim != 4 or frames.shape[1:] != tuple(spec.input_shape):
        raise nd.ShapeError(f"encoder expects [batch, {spec.input_shape}], got {frames.shape}")
    h = frames
    for i, (_, _, s) in enumerate(spec.stages):
        h = nd.relu(nd.conv2d(h, params[f"c{i}.w"], params[f"c{i}.b"], stride=s))
    h = nd.reshape(h, (frames.shape[0], -1))
    return nd.tanh(nd.linear(h, params["proj.w"], params["proj.b"]))


class ConvEncoder:
    def __init__(self, spec: ConvEncoderSpec, rng: np.random.Generator | None = None, params: ParamSet | None = None):
        self.spec = spec
        self.params = params if params is not None else init_encoder(spec, rng)

    def __call__(self, frames: nd.Tensor) -> nd.Tensor:
        return encoder_forward(self.spec, self.params, frames)

    def parameters(self) -> list[nd.Tensor]:
        return list(self.params.values())


def clone_params(params: ParamSet, requires_grad: bool = False) -> ParamSet:
    return {k: nd.Tensor(v.data.copy(), requires_grad=requires_grad, name=k) for k, v in params.items()}


@dataclass
class EmaTarget:
    """Shadow copy of a parameter set that never receives gradients."""

    shadow: ParamSet
    tau: float = 0.01
    _keys: tuple[str, ...] = field(init=False, repr=False)

    def __post_init__(self):
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError(f"EMA rate must lie in [0, 1], got {self.tau}")
        self._keys = tuple(self.shadow)

    @classmethod
    def of(cls, online: ParamSet, tau: float = 0.01) -> "EmaTarget":
        return cls(clone_params(online), tau)


def ema_update(target: EmaTarget, online: ParamSet) -> None:
    """``target <- (1 - tau) * target + tau * online``, element-wise and in place."""
    if tuple(online) != target._keys:
        raise nd.ShapeError("EMA target and online parameter names differ")
    tau = target.tau
    for k, t in target.shadow.items():
        src = online[k].data
        if src.shape != t.shape:
            raise nd.ShapeError(f"EMA shape mismatch for {k}: {t.shape} vs {src.shape}")
        t.data *= 1.0 - tau
        t.data += tau * src
