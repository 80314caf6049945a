"""Minimal reverse-mode automatic differentiation over float64 numpy arrays.

Operations executed on tensors that require gradients are appended to the
active :class:`Tape`. :func:`backward` walks that tape in exact reverse
insertion order. Broadcasting is deliberately limited to scalar-with-tensor
and equal shapes; anything else must go through :func:`broadcast_to`.
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

from . import kernels


class NdgradError(Exception):
    """Base class for autodiff errors."""


class ShapeError(NdgradError, ValueError):
    """Operand shapes are incompatible."""


class NumericError(NdgradError, FloatingPointError):
    """An op produced NaN/Inf or was evaluated outside its domain."""

    def __init__(self, op: str, detail: str = "non-finite result"):
        super().__init__(f"{op}: {detail}")
        self.op = op


class Tensor:
    """Dense float64 array with an optional accumulated gradient."""

    __slots__ = ("data", "grad", "requires_grad", "is_leaf", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.is_leaf = True
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# tape


class _Op:
    __slots__ = ("name", "out", "inputs", "needs", "backward")

    def __init__(self, name: str, out: Tensor, inputs: tuple[Tensor, ...], backward: Callable):
        self.name = name
        self.out = out
        self.inputs = inputs
        # frozen at record time so that frozen() scopes hold through backward
        self.needs = tuple(t.requires_grad for t in inputs)
        self.backward = backward


class Tape:
    """Ordered record of executed differentiable operations."""

    def __init__(self) -> None:
        self.ops: list[_Op] = []

    def __len__(self) -> int:
        return len(self.ops)

    def record(self, name: str, out: Tensor, inputs: tuple[Tensor, ...], backward: Callable) -> None:
        out.is_leaf = False
        self.ops.append(_Op(name, out, inputs, backward))

    def backward(self, loss: Tensor) -> None:
        if loss.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        if not self.ops:
            raise ValueError("backward called on an empty tape")
        if not loss.requires_grad:
            raise ValueError("loss does not depend on any tensor that requires grad")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        leaves: dict[int, tuple[Tensor, np.ndarray]] = {}
        for op in reversed(self.ops):
            g = grads.pop(id(op.out), None)
            if g is None:
                continue
            op.out.grad = g
            in_grads = op.backward(g)
            for inp, need, ig in zip(op.inputs, op.needs, in_grads):
                if ig is None or not need:
                    continue
                if inp.is_leaf:
                    prev = leaves.get(id(inp))
                    leaves[id(inp)] = (inp, ig if prev is None else prev[1] + ig)
                else:
                    key = id(inp)
                    grads[key] = ig if key not in grads else grads[key] + ig
        for t, g in leaves.values():
            t.grad = g.copy() if t.grad is None else t.grad + g

    def reset(self) -> None:
        """Drop recorded ops and clear every gradient they touched."""
        for op in self.ops:
            op.out.grad = None
            for t in op.inputs:
                t.grad = None
        self.ops.clear()


_tapes: list[Tape] = [Tape()]
_grad_enabled: list[bool] = [True]


def current_tape() -> Tape:
    return _tapes[-1]


@contextlib.contextmanager
def use_tape(tape: Tape | None = None) -> Iterator[Tape]:
    tape = Tape() if tape is None else tape
    _tapes.append(tape)
    try:
        yield tape
    finally:
        _tapes.pop()


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    _grad_enabled.append(False)
    try:
        yield
    finally:
        _grad_enabled.pop()


@contextlib.contextmanager
def frozen(params: Iterable[Tensor]) -> Iterator[None]:
    """Temporarily stop gradient accumulation into ``params``."""
    params = list(params)
    flags = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = False
    try:
        yield
    finally:
        for p, f in zip(params, flags):
            p.requires_grad = f


def grad_enabled() -> bool:
    return _grad_enabled[-1]


def backward(loss: Tensor) -> None:
    current_tape().backward(loss)


def _finish(name: str, data: np.ndarray, inputs: tuple[Tensor, ...], bw: Callable) -> Tensor:
    # a finite sum implies finite entries; the exact check only runs otherwise
    if not math.isfinite(data.sum()) and not np.isfinite(data).all():
        raise NumericError(name)
    needs = _grad_enabled[-1] and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs)
    if needs:
        current_tape().record(name, out, inputs, bw)
    return out


# ---------------------------------------------------------------------------
# elementwise


def _pair(a, b, op: str) -> tuple[Tensor, Tensor]:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast (scalar or equal only)")
    return a, b


def _reduce_to(g: np.ndarray, t: Tensor) -> np.ndarray:
    if g.shape == t.shape:
        return g
    return np.asarray(g.sum()).reshape(t.shape)


def add(a, b) -> Tensor:
    a, b = _pair(a, b, "add")
    out = a.data + b.data
    return _finish("add", out, (a, b), lambda g: (_reduce_to(g, a), _reduce_to(g, b)))


def sub(a, b) -> Tensor:
    a, b = _pair(a, b, "sub")
    out = a.data - b.data
    return _finish("sub", out, (a, b), lambda g: (_reduce_to(g, a), _reduce_to(-g, b)))


def mul(a, b) -> Tensor:
    if not isinstance(b, Tensor) and np.ndim(b) == 0:
        return scale(a, float(b))
    a, b = _pair(a, b, "mul")
    out = a.data * b.data
    return _finish("mul", out, (a, b), lambda g: (_reduce_to(g * b.data, a), _reduce_to(g * a.data, b)))


def scale(x: Tensor, c) -> Tensor:
    """Multiply by a constant: a float, or an array of exactly ``x``'s shape."""
    c = np.asarray(c, dtype=np.float64)
    if c.ndim and c.shape != x.shape:
        raise ShapeError(f"scale: constant shape {c.shape} != tensor shape {x.shape}")
    return _finish("scale", x.data * c, (x,), lambda g: (g * c,))


def neg(x: Tensor) -> Tensor:
    return _finish("neg", -x.data, (x,), lambda g: (-g,))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _finish("relu", x.data * mask, (x,), lambda g: (g * mask,))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _finish("tanh", y, (x,), lambda g: (g * (1.0 - y * y),))


def sigmoid(x: Tensor) -> Tensor:
    y = _sigmoid(x.data)
    return _finish("sigmoid", y, (x,), lambda g: (g * y * (1.0 - y),))


def exp(x: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        y = np.exp(x.data)
    if not np.all(np.isfinite(y)):
        raise NumericError("exp", "overflow")
    return _finish("exp", y, (x,), lambda g: (g * y,))


def log(x: Tensor) -> Tensor:
    if np.any(x.data <= 0):
        raise NumericError("log", "non-positive argument")
    return _finish("log", np.log(x.data), (x,), lambda g: (g / x.data,))


def softplus(x: Tensor) -> Tensor:
    y = np.logaddexp(0.0, x.data)
    return _finish("softplus", y, (x,), lambda g: (g * _sigmoid(x.data),))


def square(x: Tensor) -> Tensor:
    return _finish("square", x.data * x.data, (x,), lambda g: (2.0 * g * x.data,))


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    """Hard clamp; gradient passes only where the input is inside the bounds."""
    y = np.clip(x.data, lo, hi)
    inside = (x.data >= lo) & (x.data <= hi)
    return _finish("clip", y, (x,), lambda g: (g * inside,))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


# ---------------------------------------------------------------------------
# reductions and shape ops


def _expand(g: np.ndarray, shape: tuple[int, ...], axis) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(g, shape)
    return np.broadcast_to(np.expand_dims(g, axis), shape)


def sum(x: Tensor, axis: int | None = None) -> Tensor:  # noqa: A001
    y = np.asarray(x.data.sum(axis=axis))
    return _finish("sum", y, (x,), lambda g: (np.array(_expand(g, x.shape, axis)),))


def mean(x: Tensor, axis: int | None = None) -> Tensor:
    n = x.size if axis is None else x.shape[axis]
    y = np.asarray(x.data.mean(axis=axis))
    return _finish("mean", y, (x,), lambda g: (np.array(_expand(g, x.shape, axis)) / n,))


def log_sum_exp(x: Tensor, axis: int = -1) -> Tensor:
    m = x.data.max(axis=axis, keepdims=True)
    e = np.exp(x.data - m)
    s = e.sum(axis=axis, keepdims=True)
    y = (m + np.log(s)).squeeze(axis)
    p = e / s
    return _finish("log_sum_exp", y, (x,), lambda g: (np.expand_dims(g, axis) * p,))


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    m = x.data.max(axis=axis, keepdims=True)
    z = x.data - m
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    y = z - lse
    p = np.exp(y)
    return _finish("log_softmax", y, (x,), lambda g: (g - p * g.sum(axis=axis, keepdims=True),))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    m = x.data.max(axis=axis, keepdims=True)
    e = np.exp(x.data - m)
    p = e / e.sum(axis=axis, keepdims=True)
    return _finish("softmax", p, (x,), lambda g: (p * (g - (g * p).sum(axis=axis, keepdims=True)),))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    y = x.data.reshape(shape)
    return _finish("reshape", y, (x,), lambda g: (g.reshape(x.shape),))


def broadcast_to(x: Tensor, shape: Sequence[int]) -> Tensor:
    """Explicit numpy-style broadcast; the gradient sums over expanded axes."""
    shape = tuple(shape)
    try:
        y = np.broadcast_to(x.data, shape)
    except ValueError as exc:
        raise ShapeError(f"broadcast_to: {x.shape} -> {shape}") from exc
    lead = len(shape) - x.ndim

    def bw(g):
        g = g.sum(axis=tuple(range(lead))) if lead else g
        axes = tuple(i for i, n in enumerate(x.shape) if n == 1 and g.shape[i] != 1)
        return (g.sum(axis=axes, keepdims=True) if axes else g,)

    return _finish("broadcast_to", np.array(y), (x,), bw)


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    xs = tuple(as_tensor(x) for x in xs)
    y = np.concatenate([x.data for x in xs], axis=axis)
    cuts = np.cumsum([x.shape[axis] for x in xs])[:-1]
    return _finish("concat", y, xs, lambda g: tuple(np.split(g, cuts, axis=axis)))


def getitem(x: Tensor, index) -> Tensor:
    y = x.data[index]

    def bw(g):
        out = np.zeros_like(x.data)
        out[index] = g
        return (out,)

    return _finish("getitem", np.array(y), (x,), bw)


def detach(x: Tensor) -> Tensor:
    return x.detach()


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: {a.shape} x {b.shape}")
    y = a.data @ b.data

    def bw(g):
        return (g @ b.data.T if a.requires_grad else None, a.data.T @ g if b.requires_grad else None)

    return _finish("matmul", y, (a, b), bw)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w + b`` with the bias added to every row."""
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"linear: input {x.shape} vs weight {w.shape}")
    if b is not None and b.shape != (w.shape[1],):
        raise ShapeError(f"linear: bias {b.shape} vs weight {w.shape}")
    y = x.data @ w.data
    if b is not None:
        y += b.data

    def bw(g):
        gx = g @ w.data.T if x.requires_grad else None
        gw = x.data.T @ g if w.requires_grad else None
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=0)

    inputs = (x, w) if b is None else (x, w, b)
    return _finish("linear", y, inputs, bw)


def conv2d(x: Tensor, kernels_: Tensor, bias: Tensor | None = None, stride: int = 1) -> Tensor:
    """Valid (unpadded) 2-D cross-correlation.

    ``x`` is ``[C_in, H, W]`` or batched ``[B, C_in, H, W]``; ``kernels_`` is
    ``[C_out, C_in, kh, kw]``.
    """
    if stride < 1:
        raise ShapeError("conv2d: stride must be positive")
    single = x.ndim == 3
    xd = x.data[None] if single else x.data
    if xd.ndim != 4 or kernels_.ndim != 4:
        raise ShapeError(f"conv2d: input {x.shape}, kernels {kernels_.shape}")
    b, c, h, w = xd.shape
    co, ci, kh, kw = kernels_.shape
    if ci != c:
        raise ShapeError(f"conv2d: input has {c} channels, kernels expect {ci}")
    if kh > h or kw > w:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} larger than input {h}x{w}")
    oh = (h - kh) // stride + 1
    ow = (w - kw) // stride + 1
    cols = kernels.im2col(np.ascontiguousarray(xd), kh, kw, stride)
    wmat = kernels_.data.reshape(co, -1)
    y = cols @ wmat.T
    if bias is not None:
        y += bias.data
    y = y.reshape(b, oh, ow, co).transpose(0, 3, 1, 2)
    if single:
        y = y[0]

    def bw(g):
        g4 = g[None] if single else g
        gm = np.ascontiguousarray(g4.transpose(0, 2, 3, 1)).reshape(-1, co)
        gx = gk = None
        if x.requires_grad:
            gx = kernels.col2im(np.ascontiguousarray(gm @ wmat), (b, c, h, w), kh, kw, stride)
            gx = gx[0] if single else gx
        if kernels_.requires_grad:
            gk = (gm.T @ cols).reshape(kernels_.shape)
        if bias is None:
            return gx, gk
        return gx, gk, gm.sum(axis=0)

    inputs = (x, kernels_) if bias is None else (x, kernels_, bias)
    return _finish("conv2d", np.ascontiguousarray(y), inputs, bw)


# ---------------------------------------------------------------------------
# optimization


def global_norm(grads: Iterable[np.ndarray | None]) -> float:
    return math.sqrt(float(np.sum([np.sum(g * g) for g in grads if g is not None] or [0.0])))


def clip_grad_norm(params: Sequence[Tensor], max_norm: float) -> float:
    """Rescale gradients in place so their global norm is at most ``max_norm``."""
    norm = global_norm(p.grad for p in params)
    if norm > max_norm:
        k = max_norm / (norm + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * k
    return norm


class Adam:
    """Adam with bias correction and a global-norm clip before each step."""

    def __init__(
        self,
        params: Sequence[Tensor],
        lr: float = 1e-4,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        clip_norm: float | None = 10.0,
    ):
        self.params = list(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.clip_norm = clip_norm
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> float:
        """Apply one update from the parameters' ``.grad``; returns the pre-clip norm."""
        norm = (
            clip_grad_norm(self.params, self.clip_norm)
            if self.clip_norm is not None
            else global_norm(p.grad for p in self.params)
        )
        self.t += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad if p.grad is not None else 0.0
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return norm

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {"t": np.array([self.t], dtype=np.float64)}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            out[f"m.{i}"] = m
            out[f"v.{i}"] = v
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        self.t = int(arrays["t"][0])
        for i in range(len(self.params)):
            self.m[i][...] = arrays[f"m.{i}"]
            self.v[i][...] = arrays[f"v.{i}"]
