"""Built-in desk-scale environments and observation wrappers.

Every environment acts on ``[-1, 1]^action_dim`` and is deterministic given
its seed and the action sequence.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels

log = logging.getLogger(__name__)

ENV_IDS = ("bandit1d", "pointmass", "pointmass-pixels")


@dataclass(frozen=True)
class EnvSpec:
    id: str
    obs_kind: str
    obs_shape: tuple[int, ...]
    action_dim: int
    episode_length: int
    action_repeat: int = 1
    frame_stack: int = 1


@dataclass
class StepResult:
    observation: np.ndarray
    reward: float
    done: bool
    info: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# 1-D continuous bandit

OPTIMAL_BAND = (0.70, 0.80)
SUBOPTIMAL_BAND = (-0.60, -0.20)


def bandit_reward(action: float) -> float:
    if OPTIMAL_BAND[0] <= action <= OPTIMAL_BAND[1]:
        return 1.0
    if SUBOPTIMAL_BAND[0] <= action <= SUBOPTIMAL_BAND[1]:
        return 0.5
    return 0.0


class Bandit1D:
    """Single-step episodes on a constant observation ``[0]``.

    Reward is 1.0 on a narrow band, 0.5 on a band four times wider, 0 elsewhere.
    """

    spec = EnvSpec("bandit1d", "vector", (1,), 1, 1)

    def __init__(self, seed: int = 0):
        self.seed = seed

    def reset(self) -> np.ndarray:
        return np.zeros(1)

    def step(self, action) -> StepResult:
        a = float(np.asarray(action, dtype=np.float64).reshape(-1)[0])
        clamped = not -1.0 <= a <= 1.0
        if clamped:
            log.debug("bandit action %r clamped to [-1, 1]", a)
            a = min(max(a, -1.0), 1.0)
        r = bandit_reward(a)
        return StepResult(np.zeros(1), r, True, {"success": r == 1.0, "terminal": True, "clamped": clamped})


def bandit_step(action: float) -> StepResult:
    return Bandit1D().step(action)


# ---------------------------------------------------------------------------
# 2-D point mass

GOAL = np.array([0.7, 0.7])


@dataclass
class PointMassState:
    pos: np.ndarray
    vel: np.ndarray


def pointmass_step(state: PointMassState, action) -> tuple[PointMassState, float, bool]:
    """Double integrator with clamped position and velocity; returns ``(state, reward, success)``."""
    a = np.clip(np.asarray(action, dtype=np.float64).reshape(2), -1.0, 1.0)
    pos = np.clip(state.pos + 0.05 * state.vel, -1.0, 1.0)
    vel = np.clip(0.9 * state.vel + 0.1 * a, -1.0, 1.0)
    d2 = float(np.sum((pos - GOAL) ** 2))
    return PointMassState(pos, vel), float(np.exp(-8.0 * d2)), bool(np.sqrt(d2) < 0.1)


class PointMass:
    spec = EnvSpec("pointmass", "vector", (4,), 2, 200)

    def __init__(self, seed: int = 0):
        self.rng = np.random.default_rng(seed)
        self.state = PointMassState(np.zeros(2), np.zeros(2))
        self.t = 0

    def observe(self) -> np.ndarray:
        return np.concatenate([self.state.pos, self.state.vel])

    def reset(self) -> np.ndarray:
        self.state = PointMassState(self.rng.uniform(-1.0, 1.0, size=2), np.zeros(2))
        self.t = 0
        return self.observe()

    def step(self, action) -> StepResult:
        self.state, r, success = pointmass_step(self.state, action)
        self.t += 1
        done = self.t >= self.spec.episode_length
        return StepResult(self.observe(), r, done, {"success": success, "terminal": False})


CANVAS = 32


def _pixel(coord: float) -> int:
    return int(np.clip(np.floor((coord + 1.0) / 2.0 * CANVAS), 1, CANVAS - 2))


def render_pixels(state: PointMassState) -> np.ndarray:
    """``[1, 32, 32]`` canvas: goal as a 0.5 block, agent as a 1.0 block on top.

    Column grows with x, row grows as y decreases; blocks are 3x3 and are
    clamped to stay on the canvas.
    """
    img = np.zeros((1, CANVAS, CANVAS))
    for (x, y), val in ((GOAL, 0.5), (state.pos, 1.0)):
        c, r = _pixel(float(x)), _pixel(-float(y))
        img[0, r - 1 : r + 2, c - 1 : c + 2] = val
    return img


class PointMassPixels(PointMass):
    spec = EnvSpec("pointmass-pixels", "pixels", (1, CANVAS, CANVAS), 2, 200)

    def observe(self) -> np.ndarray:
        return render_pixels(self.state)


# ---------------------------------------------------------------------------
# wrappers


class ActionRepeat:
    def __init__(self, env, k: int = 2):
        self.env = env
        self.k = k
        self.spec = replace(env.spec, action_repeat=k)

    def reset(self) -> np.ndarray:
        return self.env.reset()

    def step(self, action) -> StepResult:
        total = 0.0
        info: dict = {}
        success = False
        for _ in range(self.k):
            res = self.env.step(action)
            total += res.reward
            success = success or res.info.get("success", False)
            info = res.info
            if res.done:
                break
        return StepResult(res.observation, total, res.done, {**info, "success": success})


class FrameStack:
    def __init__(self, env, k: int = 3):
        self.env = env
        self.k = k
        c, h, w = env.spec.obs_shape
        self.spec = replace(env.spec, obs_shape=(c * k, h, w), frame_stack=k)
        self.frames: list[np.ndarray] = []

    def _obs(self) -> np.ndarray:
        return np.concatenate(self.frames, axis=0)

    def reset(self) -> np.ndarray:
        first = self.env.reset()
        self.frames = [first] * self.k
        return self._obs()

    def step(self, action) -> StepResult:
        res = self.env.step(action)
        self.frames = self.frames[1:] + [res.observation]
        return StepResult(self._obs(), res.reward, res.done, res.info)


def action_repeat(env, k: int = 2) -> ActionRepeat:
    return ActionRepeat(env, k)


def frame_stack(env, k: int = 3) -> FrameStack:
    return FrameStack(env, k)


def make_env(env_id: str, seed: int = 0, action_repeat_k: int = 2, frame_stack_k: int = 3):
    if env_id == "bandit1d":
        return Bandit1D(seed)
    if env_id == "pointmass":
        return ActionRepeat(PointMass(seed), action_repeat_k)
    if env_id == "pointmass-pixels":
        return FrameStack(ActionRepeat(PointMassPixels(seed), action_repeat_k), frame_stack_k)
    raise ValueError(f"unknown env id {env_id!r}; choose from {ENV_IDS}")


def random_shift_aug(frames: np.ndarray, rng: np.random.Generator, pad: int = 4) -> np.ndarray:
    """Replicate-pad then crop a random window of the original size.

    ``frames`` is ``[C, H, W]`` or ``[B, C, H, W]``; one shift per observation,
    shared by its stacked channels.
    """
    x = np.asarray(frames, dtype=np.float64)
    single = x.ndim == 3
    if single:
        x = x[None]
    shifts = rng.integers(0, 2 * pad + 1, size=(x.shape[0], 2)).astype(np.int64)
    out = kernels.random_shift(np.ascontiguousarray(x), pad, shifts)
    return out[0] if single else out
