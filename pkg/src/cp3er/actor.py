"""Policies and their losses."""

from __future__ import annotations

import math

import numpy as np

from . import ndgrad as nd
from .consistency import NoiseSchedule, consistency_loss, sample_action
from .critic import Critic, q_mean
from .nets import EmaTarget, Mlp, MlpSpec, ema_update

LOG_STD_MIN, LOG_STD_MAX = -10.0, 2.0


class ConsistencyActor:
    """Consistency policy with an EMA target copy for the consistency loss.

    ``eta`` weights the consistency regularizer; ``eta = 0`` is the plain
    Q-loss actor.
    """

    def __init__(
        self,
        feat_dim: int,
        action_dim: int,
        hidden_dim: int = 1024,
        hidden_layers: int = 2,
        schedule: NoiseSchedule | None = None,
        eta: float = 0.05,
        tau_ema: float = 0.01,
        sampling_steps: int = 1,
        rng: np.random.Generator | None = None,
        params=None,
    ):
        if eta < 0:
            raise ValueError("eta must be non-negative")
        self.feat_dim = feat_dim
        self.action_dim = action_dim
        self.schedule = schedule or NoiseSchedule()
        self.eta = eta
        self.sampling_steps = sampling_steps
        spec = MlpSpec(feat_dim + action_dim + 1, action_dim, hidden_dim, hidden_layers)
        self.net = Mlp(spec, rng=rng, params=params)
        self.ema = EmaTarget.of(self.net.params, tau_ema)
        self.ema_net = Mlp(spec, params=self.ema.shadow)

    def parameters(self) -> list[nd.Tensor]:
        return self.net.parameters()

    def sample(self, feats, rng: np.random.Generator, steps: int | None = None, capture=None) -> nd.Tensor:
        return sample_action(
            self.net, self.schedule, nd.as_tensor(feats), self.action_dim, rng, steps or self.sampling_steps, capture
        )

    def act(self, feats, rng: np.random.Generator, explore: bool = False) -> np.ndarray:
        """Actions for a batch of features; uniform on ``[-1, 1]^d`` while exploring."""
        feats = np.atleast_2d(np.asarray(feats, dtype=np.float64))
        if explore:
            return rng.uniform(-1.0, 1.0, size=(feats.shape[0], self.action_dim))
        with nd.no_grad():
            return self.sample(nd.Tensor(feats), rng).data

    def update_target(self) -> None:
        ema_update(self.ema, self.net.params)


class GaussianActor:
    """Tanh-squashed diagonal Gaussian with a fixed entropy temperature."""

    def __init__(
        self,
        feat_dim: int,
        action_dim: int,
        hidden_dim: int = 1024,
        hidden_layers: int = 2,
        temperature: float = 0.1,
        rng: np.random.Generator | None = None,
        params=None,
    ):
        self.feat_dim = feat_dim
        self.action_dim = action_dim
        self.temperature = temperature
        self.net = Mlp(MlpSpec(feat_dim, 2 * action_dim, hidden_dim, hidden_layers), rng=rng, params=params)

    def parameters(self) -> list[nd.Tensor]:
        return self.net.parameters()

    def heads(self, feats, capture=None) -> tuple[nd.Tensor, nd.Tensor]:
        out = self.net(nd.as_tensor(feats), capture)
        d = self.action_dim
        return out[:, :d], nd.clip(out[:, d:], LOG_STD_MIN, LOG_STD_MAX)

    def sample(self, feats, rng: np.random.Generator) -> tuple[nd.Tensor, nd.Tensor]:
        """Reparameterized ``(action, log_prob)``; log-prob includes the tanh Jacobian."""
        mu, log_std = self.heads(feats)
        eps = rng.standard_normal(mu.shape)
        u = nd.add(mu, nd.mul(nd.exp(log_std), nd.Tensor(eps)))
        a = nd.tanh(u)
        # log N(u) = -eps^2/2 - log_std - log(2 pi)/2 ; log|da/du| = 2 (log 2 - u - softplus(-2u))
        gauss = nd.sub(nd.Tensor(-0.5 * eps * eps - 0.5 * math.log(2 * math.pi)), log_std)
        jac = nd.scale(nd.sub(nd.sub(nd.Tensor(np.full(u.shape, math.log(2.0))), u), nd.softplus(nd.scale(u, -2.0))), 2.0)
        return a, nd.sum(nd.sub(gauss, jac), axis=1)

    def act(self, feats, rng: np.random.Generator, explore: bool = False, greedy: bool = False) -> np.ndarray:
        feats = np.atleast_2d(np.asarray(feats, dtype=np.float64))
        if explore:
            return rng.uniform(-1.0, 1.0, size=(feats.shape[0], self.action_dim))
        with nd.no_grad():
            if greedy:
                return np.tanh(self.heads(nd.Tensor(feats))[0].data)
            return self.sample(nd.Tensor(feats), rng)[0].data

    def update_target(self) -> None:
        pass


def q_loss(actor: ConsistencyActor, critic: Critic, states, rng: np.random.Generator) -> nd.Tensor:
    """``-mean Q(s, a)`` with ``a`` drawn from the actor; gradient reaches only the actor."""
    with nd.frozen(critic.parameters()):
        a = actor.sample(states, rng)
        return nd.neg(nd.mean(q_mean(critic(nd.as_tensor(states).detach(), a))))


def regularized_loss(
    actor: ConsistencyActor,
    critic: Critic,
    states,
    reg_actions: np.ndarray,
    rng: np.random.Generator,
    parts: dict | None = None,
) -> nd.Tensor:
    """Q-loss plus ``eta`` times the consistency loss on proxy actions.

    Both terms use the same state batch. With ``eta == 0`` the consistency
    term is skipped entirely, so the result is bit-identical to :func:`q_loss`.
    """
    ql = q_loss(actor, critic, states, rng)
    if parts is not None:
        parts["q_loss"] = ql.item()
    if actor.eta == 0:
        return ql
    lc = consistency_loss(actor.net, actor.ema_net, actor.schedule, nd.as_tensor(states).detach(), reg_actions, rng)
    if parts is not None:
        parts["consistency_loss"] = lc.item()
    return nd.add(ql, nd.scale(lc, actor.eta))


def consistency_only_loss(actor: ConsistencyActor, states, reg_actions: np.ndarray, rng: np.random.Generator) -> nd.Tensor:
    """Behavior-cloning mode: the consistency loss alone, no critic involved."""
    return consistency_loss(actor.net, actor.ema_net, actor.schedule, nd.as_tensor(states).detach(), reg_actions, rng)


def gaussian_maxent_loss(actor: GaussianActor, critic: Critic, states, rng: np.random.Generator) -> nd.Tensor:
    """``-E[Q(s, a) - temperature * log pi(a|s)]`` with reparameterized actions."""
    with nd.frozen(critic.parameters()):
        a, logp = actor.sample(states, rng)
        q = q_mean(critic(nd.as_tensor(states).detach(), a))
        return nd.neg(nd.mean(nd.sub(q, nd.scale(logp, actor.temperature))))
