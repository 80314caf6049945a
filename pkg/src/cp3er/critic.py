"""Distributional critic: a mixture of Gaussians over the return of (s, a)."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import ndgrad as nd
from .nets import Mlp, MlpSpec

STD_FLOOR = 1e-3
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass
class MoGParams:
    """Per-row mixture; each field is a ``[batch, C]`` tensor."""

    log_weights: nd.Tensor
    weights: nd.Tensor
    means: nd.Tensor
    stds: nd.Tensor

    @property
    def components(self) -> int:
        return self.means.shape[1]

    @classmethod
    def from_arrays(cls, weights, means, stds) -> "MoGParams":
        """Build a constant mixture; 1-D inputs describe a single row."""
        w = np.atleast_2d(np.asarray(weights, dtype=np.float64))
        mu = np.atleast_2d(np.asarray(means, dtype=np.float64))
        sd = np.atleast_2d(np.asarray(stds, dtype=np.float64))
        logw = np.log(np.maximum(w, 1e-300))
        return cls(nd.Tensor(logw), nd.Tensor(w), nd.Tensor(mu), nd.Tensor(sd))


class Critic:
    """Single online MoG critic over concatenated (state features, action)."""

    def __init__(
        self,
        feat_dim: int,
        action_dim: int,
        hidden_dim: int = 1024,
        hidden_layers: int = 2,
        components: int = 3,
        rng: np.random.Generator | None = None,
        zero_final: bool = False,
        params=None,
    ):
        self.feat_dim = feat_dim
        self.action_dim = action_dim
        self.components = components
        spec = MlpSpec(feat_dim + action_dim, 3 * components, hidden_dim, hidden_layers)
        self.net = Mlp(spec, rng=rng, params=params, zero_final=zero_final)

    def __call__(self, state_feat, action) -> MoGParams:
        return critic_forward(self.net, self.components, state_feat, action)

    def parameters(self) -> list[nd.Tensor]:
        return self.net.parameters()


def critic_forward(net: Mlp, components: int, state_feat, action) -> MoGParams:
    x = nd.concat([nd.as_tensor(state_feat), nd.as_tensor(action)], axis=1)
    out = net(x)
    c = components
    logits = out[:, :c]
    return MoGParams(
        log_weights=nd.log_softmax(logits, axis=1),
        weights=nd.softmax(logits, axis=1),
        means=out[:, c : 2 * c],
        stds=nd.add(nd.softplus(out[:, 2 * c :]), STD_FLOOR),
    )


def mog_log_prob(dist: MoGParams, x) -> nd.Tensor:
    """``log sum_j w_j N(x; mu_j, sigma_j^2)`` per row and sample.

    ``x`` may be ``[B]`` (one point per row) or ``[B, M]``; the result has the
    same shape.
    """
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[:, None]
    b, m = x.shape
    c = dist.components
    shape = (b, m, c)

    def spread(t: nd.Tensor) -> nd.Tensor:
        return nd.broadcast_to(nd.reshape(t, (b, 1, c)), shape)

    log_sd = nd.log(dist.stds)
    inv_sd = nd.exp(nd.neg(log_sd))
    xs = nd.Tensor(np.broadcast_to(x[:, :, None], shape))
    zscore = nd.mul(nd.sub(xs, spread(dist.means)), spread(inv_sd))
    comp = nd.sub(nd.scale(nd.square(zscore), -0.5), nd.add(spread(log_sd), _HALF_LOG_2PI))
    out = nd.log_sum_exp(nd.add(comp, spread(dist.log_weights)), axis=2)
    return nd.reshape(out, (b,)) if squeeze else out


def mog_sample(dist: MoGParams, rng: np.random.Generator, count: int) -> np.ndarray:
    """``count`` detached draws per row: a component, then a Gaussian."""
    if count < 1:
        raise ValueError("need at least one sample")
    w = dist.weights.data
    b, c = w.shape
    cdf = np.cumsum(w, axis=1)
    u = rng.random((b, count)) * cdf[:, -1:]
    comp = np.minimum((u[:, :, None] >= cdf[:, None, :]).sum(axis=2), c - 1)
    rows = np.arange(b)[:, None]
    mu = dist.means.data[rows, comp]
    sd = dist.stds.data[rows, comp]
    return mu + sd * rng.standard_normal((b, count))


def q_mean(dist: MoGParams) -> nd.Tensor:
    """Mixture mean ``sum_j w_j mu_j`` per row (differentiable)."""
    return nd.sum(nd.mul(dist.weights, dist.means), axis=1)


def critic_loss(
    critic: Critic,
    target_net: Mlp,
    next_action_fn: Callable[[nd.Tensor], np.ndarray],
    state_feat: nd.Tensor,
    actions: np.ndarray,
    reward_sum: np.ndarray,
    discount: np.ndarray,
    next_feat: nd.Tensor,
    rng: np.random.Generator,
    num_samples: int = 20,
) -> nd.Tensor:
    """Sampled negative log-likelihood of bootstrapped n-step targets.

    Targets ``R + discount * z'`` use ``num_samples`` draws ``z'`` from the EMA
    critic at ``(s', a')`` with one ``a' = next_action_fn(s')`` per row; nothing
    on the target side carries gradient.
    """
    if num_samples < 1:
        raise ValueError("num_samples must be >= 1")
    discount = np.asarray(discount, dtype=np.float64)
    r = np.asarray(reward_sum, dtype=np.float64)[:, None]
    if not discount.any():
        # every row ends in a terminal state, so the target is the reward itself
        y = np.repeat(r, num_samples, axis=1)
    else:
        with nd.no_grad():
            nf = nd.as_tensor(next_feat).detach()
            next_a = np.asarray(next_action_fn(nf))
            target = critic_forward(target_net, critic.components, nf, next_a)
            z = mog_sample(target, rng, num_samples)
        y = r + discount[:, None] * z
    dist = critic(state_feat, actions)
    return nd.neg(nd.mean(mog_log_prob(dist, y)))
