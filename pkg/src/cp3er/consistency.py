"""Consistency-model machinery for action generation.

The consistency function maps a noised action at noise level ``tau`` straight
back to a clean action::

    f(s, a_tau, tau) = c_skip(tau) * a_tau + c_out(tau) * F(c_in(tau) * a_tau, log(tau) / 4 | s)

with ``c_skip(eps) = 1`` and ``c_out(eps) = 0`` so that ``f`` is the identity
at the smallest noise level.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ndgrad as nd
from .nets import Mlp


@dataclass(frozen=True)
class NoiseSchedule:
    epsilon: float = 0.002
    K: float = 80.0
    N: int = 40
    rho: float = 7.0
    sigma_data: float = 0.5

    def __post_init__(self):
        if self.N < 2:
            raise ValueError(f"schedule needs N >= 2, got {self.N}")
        if not 0.0 < self.epsilon < self.K:
            raise ValueError("need 0 < epsilon < K")

    def times(self) -> np.ndarray:
        return schedule_times(self)

    def boundary(self, tau):
        return boundary_fns(self, tau)


def schedule_times(sched: NoiseSchedule) -> np.ndarray:
    """Increasing noise levels ``tau_1 = eps, ..., tau_N = K`` with rho-spacing."""
    if sched.N < 2:
        raise ValueError(f"schedule needs N >= 2, got {sched.N}")
    inv = 1.0 / sched.rho
    lo, hi = sched.epsilon**inv, sched.K**inv
    frac = np.arange(sched.N) / (sched.N - 1)
    t = (lo + frac * (hi - lo)) ** sched.rho
    t[0], t[-1] = sched.epsilon, sched.K
    return t


def boundary_fns(sched: NoiseSchedule, tau):
    """``(c_skip, c_out)`` at ``tau``; accepts a float or an array."""
    tau = np.asarray(tau, dtype=np.float64)
    if np.any(tau < sched.epsilon):
        raise ValueError(f"tau below epsilon={sched.epsilon}")
    sd2 = sched.sigma_data**2
    shifted = tau - sched.epsilon
    c_skip = sd2 / (shifted**2 + sd2)
    c_out = sched.sigma_data * shifted / np.sqrt(sd2 + tau**2)
    if c_skip.ndim == 0:
        return float(c_skip), float(c_out)
    return c_skip, c_out


def input_scale(sched: NoiseSchedule, tau) -> np.ndarray:
    return 1.0 / np.sqrt(np.asarray(tau, dtype=np.float64) ** 2 + sched.sigma_data**2)


def sampling_times(sched: NoiseSchedule, steps: int) -> list[float]:
    """``K`` followed by the ``steps - 1`` largest schedule points at or below ``sigma_data``."""
    if steps < 1:
        raise ValueError("sampling needs at least one step")
    low = [t for t in schedule_times(sched)[1:-1] if t <= sched.sigma_data]
    return [sched.K] + sorted(low, reverse=True)[: steps - 1]


def _column(values: np.ndarray, width: int) -> np.ndarray:
    return np.broadcast_to(values[:, None], (values.shape[0], width))


def consistency_fn(
    net: Mlp,
    sched: NoiseSchedule,
    state_feat: nd.Tensor,
    noised_action,
    tau,
    capture: list | None = None,
) -> nd.Tensor:
    """Denoise ``noised_action`` (``[B, d]``) at noise level ``tau`` (scalar or ``[B]``)."""
    a = nd.as_tensor(noised_action)
    b, d = a.shape
    tau = np.broadcast_to(np.asarray(tau, dtype=np.float64), (b,))
    lo, hi = sched.epsilon, sched.K
    if np.any(tau < lo) or np.any(tau > hi * (1 + 1e-12)):
        raise ValueError(f"tau must lie in [{lo}, {hi}]")
    c_skip, c_out = boundary_fns(sched, tau)
    c_in = input_scale(sched, tau)
    inp = nd.concat(
        [nd.as_tensor(state_feat), nd.scale(a, _column(c_in, d)), nd.Tensor((np.log(tau) / 4.0)[:, None])],
        axis=1,
    )
    f = net(inp, capture)
    return nd.add(nd.scale(a, _column(c_skip, d)), nd.scale(f, _column(c_out, d)))


def consistency_loss(
    net: Mlp,
    ema_net: Mlp,
    sched: NoiseSchedule,
    states: nd.Tensor,
    actions: np.ndarray,
    rng: np.random.Generator,
    reduce: bool = True,
) -> nd.Tensor:
    """Consistency-training loss with unit weights and squared-L2 distance.

    One ``k ~ U{1, ..., N-1}`` and one shared ``z ~ N(0, I)`` per row; the
    online net sees ``a + tau_{k+1} z``, the EMA net sees ``a + tau_k z`` and
    contributes no gradient.
    """
    actions = np.asarray(actions, dtype=np.float64)
    if actions.ndim != 2 or actions.shape[0] == 0:
        raise ValueError("consistency_loss needs a non-empty [batch, action_dim] array")
    b, d = actions.shape
    t = schedule_times(sched)
    k = rng.integers(1, sched.N, size=b)
    z = rng.standard_normal((b, d))
    tau_hi, tau_lo = t[k], t[k - 1]
    online = consistency_fn(net, sched, states, actions + tau_hi[:, None] * z, tau_hi)
    with nd.no_grad():
        target = consistency_fn(ema_net, sched, nd.as_tensor(states).detach(), actions + tau_lo[:, None] * z, tau_lo)
    rows = nd.sum(nd.square(nd.sub(online, target)), axis=1)
    return nd.mean(rows) if reduce else rows


def sample_action(
    net: Mlp,
    sched: NoiseSchedule,
    state_feat: nd.Tensor,
    action_dim: int,
    rng: np.random.Generator,
    steps: int = 1,
    capture: list | None = None,
) -> nd.Tensor:
    """Draw actions for each row of ``state_feat``; output is clamped to ``[-1, 1]``.

    Gradients flow back into ``net`` when the tape is active.
    """
    times = sampling_times(sched, steps)
    b = state_feat.shape[0]
    x = nd.Tensor(sched.K * rng.standard_normal((b, action_dim)))
    a = consistency_fn(net, sched, state_feat, x, times[0], capture)
    for tau in times[1:]:
        a = nd.clip(a, -1.0, 1.0)
        noise = np.sqrt(tau**2 - sched.epsilon**2) * rng.standard_normal((b, action_dim))
        a = consistency_fn(net, sched, state_feat, nd.add(a, nd.Tensor(noise)), tau)
    return nd.clip(a, -1.0, 1.0)
