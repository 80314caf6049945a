"""Run configuration and its flat ``key = value`` file format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any

VARIANTS = ("cp3er", "consistency_ac", "maxent_cp_uniform", "cp3er_urb", "gaussian_maxent")
LOSS_MODES = ("default", "consistency_only")


@dataclass(frozen=True)
class Config:
    """Hyperparameters. Defaults follow the published table except ``capacity``."""

    env: str = "pointmass-pixels"
    seed: int = 0
    steps: int = 100_000  # environment frames
    capacity: int = 100_000
    batch_size: int = 256
    gamma: float = 0.99
    nstep: int = 3
    lr: float = 1e-4
    tau_ema: float = 0.01
    hidden_dim: int = 1024
    hidden_layers: int = 2
    feature_dim: int = 50
    mog_components: int = 3
    num_target_samples: int = 20
    ppe_alpha: float = 2.0
    eta: float = 0.05
    dormant_threshold: float = 0.025
    seed_frames: int = 4000
    exploration_steps: int = 10_000  # frames of uniform-random actions
    actor_variant: str = "cp3er"
    loss_mode: str = "default"
    sampling_steps: int = 1
    schedule_points: int = 40
    action_repeat: int = 2
    frame_stack: int = 3
    aug_pad: int = 4
    gaussian_temperature: float = 0.1
    log_interval: int = 1000  # frames
    dormant_interval: int = 1000  # updates
    dormant_probe_size: int = 512
    hist_interval: int = 0  # frames; 0 disables action histograms
    hist_samples: int = 2048
    eval_episodes: int = 10
    record_fps: bool = False

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        from .envs import ENV_IDS

        problems = []
        if self.env not in ENV_IDS:
            problems.append(f"env must be one of {ENV_IDS}")
        if self.actor_variant not in VARIANTS:
            problems.append(f"actor_variant must be one of {VARIANTS}")
        if self.loss_mode not in LOSS_MODES:
            problems.append(f"loss_mode must be one of {LOSS_MODES}")
        if self.loss_mode == "consistency_only" and self.actor_variant == "gaussian_maxent":
            problems.append("consistency_only needs a consistency actor")
        for name in ("capacity", "batch_size", "nstep", "hidden_dim", "feature_dim", "mog_components",
                     "num_target_samples", "sampling_steps", "action_repeat", "frame_stack", "log_interval",
                     "dormant_interval", "dormant_probe_size", "hist_samples"):
            if getattr(self, name) < 1:
                problems.append(f"{name} must be >= 1")
        if self.steps < 0 or self.seed_frames < 0 or self.exploration_steps < 0 or self.hist_interval < 0:
            problems.append("step counts must be non-negative")
        if self.schedule_points < 2:
            problems.append("schedule_points must be >= 2")
        if not 0.0 < self.gamma <= 1.0:
            problems.append("gamma must lie in (0, 1]")
        if not 0.0 <= self.tau_ema <= 1.0:
            problems.append("tau_ema must lie in [0, 1]")
        if self.eta < 0 or self.lr <= 0 or self.ppe_alpha < 0:
            problems.append("eta, ppe_alpha must be >= 0 and lr > 0")
        if problems:
            raise ValueError("invalid config: " + "; ".join(problems))

    def replace(self, **changes) -> "Config":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class VariantSettings:
    """Structural meaning of an actor variant."""

    policy: str  # "consistency" | "gaussian"
    eta: float
    batch_sampler: str  # "ppe" | "uniform"
    proxy: str  # "batch" | "uniform_action" | "none"


def variant_settings(cfg: Config) -> VariantSettings:
    v = cfg.actor_variant
    if v == "cp3er":
        return VariantSettings("consistency", cfg.eta, "ppe", "batch")
    if v == "consistency_ac":
        return VariantSettings("consistency", 0.0, "ppe", "batch")
    if v == "cp3er_urb":
        return VariantSettings("consistency", cfg.eta, "uniform", "batch")
    if v == "maxent_cp_uniform":
        return VariantSettings("consistency", cfg.eta, "ppe", "uniform_action")
    return VariantSettings("gaussian", 0.0, "ppe", "none")


def _parse_value(raw: str) -> Any:
    raw = raw.strip()
    if raw.lower() in ("true", "false"):
        return raw.lower() == "true"
    if len(raw) >= 2 and raw[0] == raw[-1] and raw[0] in "\"'":
        return raw[1:-1]
    for cast in (int, float):
        try:
            return cast(raw.replace("_", ""))
        except ValueError:
            pass
    return raw


def parse_config_text(text: str) -> dict[str, Any]:
    known = {f.name: f for f in fields(Config)}
    out: dict[str, Any] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
        val = _parse_value(raw)
        ftype = known[key].type
        if ftype in ("float", float) and isinstance(val, int) and not isinstance(val, bool):
            val = float(val)
        out[key] = val
    return out


def load_config(path: str | Path | None = None, **overrides) -> Config:
    values = parse_config_text(Path(path).read_text()) if path else {}
    values.update({k: v for k, v in overrides.items() if v is not None})
    return Config(**values)


def format_config(cfg: Config) -> str:
    lines = []
    for k, v in cfg.to_dict().items():
        if isinstance(v, bool):
            s = "true" if v else "false"
        elif isinstance(v, str):
            s = f'"{v}"'
        else:
            s = repr(v)
        lines.append(f"{k} = {s}")
    return "\n".join(lines) + "\n"
