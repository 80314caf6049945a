"""Ring-buffer replay with uniform and prioritized-proximal-experience sampling."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import checkpoint, kernels


class InsufficientData(ValueError):
    pass


@dataclass
class Transition:
    observation: np.ndarray
    action: np.ndarray
    reward: float
    next_observation: np.ndarray
    done: bool
    insert_step: int
    terminal: bool = False


@dataclass
class NStepBatch:
    indices: np.ndarray
    obs: np.ndarray
    actions: np.ndarray
    reward_sum: np.ndarray
    next_obs: np.ndarray
    discount: np.ndarray


def ppe_weight(alpha: float, delta_t: float, capacity: int) -> float:
    """Recency weight ``1 / (1 + exp(2 alpha - 2 alpha |B| / dt))``."""
    if delta_t <= 0:
        raise ValueError(f"delta_t must be positive, got {delta_t}")
    x = 2.0 * alpha - (alpha * 2.0 * capacity) / delta_t
    if x > 700.0:
        return 0.0
    return 1.0 / (1.0 + math.exp(x))


class ReplayBuffer:
    """Fixed-capacity ring of transitions; the oldest entry is overwritten first.

    ``next_observation`` is stored per slot, so n-step windows that run into
    the newest item are cut there and bootstrap from its stored successor.
    """

    def __init__(self, capacity: int, obs_shape: tuple[int, ...], action_dim: int, obs_dtype=np.float32):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self.obs = np.zeros((capacity, *obs_shape), dtype=obs_dtype)
        self.next_obs = np.zeros((capacity, *obs_shape), dtype=obs_dtype)
        self.actions = np.zeros((capacity, action_dim), dtype=np.float64)
        self.rewards = np.zeros(capacity, dtype=np.float64)
        self.dones = np.zeros(capacity, dtype=np.bool_)
        self.terminals = np.zeros(capacity, dtype=np.bool_)
        self.insert_steps = np.zeros(capacity, dtype=np.int64)
        self.cursor = 0
        self.size = 0
        self.current_step = 0

    def __len__(self) -> int:
        return self.size

    @property
    def newest(self) -> int:
        return (self.cursor - 1) % self.capacity

    def push(self, t: Transition) -> None:
        if self.size and t.insert_step <= self.insert_steps[self.newest]:
            raise ValueError("insert_step must increase strictly")
        i = self.cursor
        self.obs[i] = t.observation
        self.next_obs[i] = t.next_observation
        self.actions[i] = t.action
        self.rewards[i] = t.reward
        self.dones[i] = t.done or t.terminal
        self.terminals[i] = t.terminal
        self.insert_steps[i] = t.insert_step
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        self.current_step = max(self.current_step, int(t.insert_step))

    def get(self, i: int) -> Transition:
        return Transition(
            self.obs[i].copy(),
            self.actions[i].copy(),
            float(self.rewards[i]),
            self.next_obs[i].copy(),
            bool(self.dones[i]),
            int(self.insert_steps[i]),
            bool(self.terminals[i]),
        )

    def _check(self, batch_size: int) -> None:
        if self.size < max(batch_size, 1):
            raise InsufficientData(f"buffer holds {self.size} items, need {batch_size}")

    def ppe_weights(self, alpha: float) -> np.ndarray:
        """Unnormalized weights of the stored items (slot order)."""
        steps = np.ascontiguousarray(self.insert_steps[: self.size])
        return kernels.ppe_weights(steps, int(self.current_step), float(alpha), self.capacity)

    def ppe_probabilities(self, alpha: float) -> np.ndarray:
        w = self.ppe_weights(alpha)
        return w / w.sum()

    def sample_ppe(self, alpha: float, batch_size: int, rng: np.random.Generator) -> np.ndarray:
        """Indices drawn with replacement, proportional to the recency weights."""
        self._check(batch_size)
        cdf = np.cumsum(self.ppe_weights(alpha))
        u = rng.random(batch_size) * cdf[-1]
        return np.minimum(np.searchsorted(cdf, u, side="right"), self.size - 1).astype(np.int64)

    def sample_uniform(self, batch_size: int, rng: np.random.Generator) -> np.ndarray:
        self._check(batch_size)
        return rng.integers(0, self.size, size=batch_size).astype(np.int64)

    def assemble_nstep(self, indices: np.ndarray, n: int, gamma: float) -> NStepBatch:
        """n-step returns; windows stop at episode boundaries and at the newest item."""
        if n < 1:
            raise ValueError("n must be >= 1")
        indices = np.ascontiguousarray(indices, dtype=np.int64)
        ret, disc, last = kernels.nstep_returns(
            self.rewards, self.dones, self.terminals, indices, int(n), float(gamma), int(self.newest)
        )
        return NStepBatch(indices, self.obs[indices], self.actions[indices], ret, self.next_obs[last], disc)

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {
            "obs": self.obs,
            "next_obs": self.next_obs,
            "actions": self.actions,
            "rewards": self.rewards,
            "dones": self.dones,
            "terminals": self.terminals,
            "insert_steps": self.insert_steps,
            "counters": np.array([self.cursor, self.size, self.current_step], dtype=np.int64),
        }

    def save(self, path: str | Path) -> Path:
        return checkpoint.save(path, self.state_arrays(), {"kind": "replay", "capacity": self.capacity})

    @classmethod
    def load(cls, path: str | Path) -> "ReplayBuffer":
        arrays, meta = checkpoint.load(path)
        obs = arrays["obs"]
        buf = cls(meta["capacity"], obs.shape[1:], arrays["actions"].shape[1], obs.dtype)
        for k in ("obs", "next_obs", "actions", "rewards", "dones", "terminals", "insert_steps"):
            getattr(buf, k)[...] = arrays[k]
        buf.cursor, buf.size, buf.current_step = (int(v) for v in arrays["counters"])
        return buf
