"""Named multi-seed experiment batches at desk scale."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

from .config import Config
from .harness import RunRecord, train

log = logging.getLogger(__name__)

# Network and batch sizes shrunk so a batch of runs fits on one CPU core.
DESK = dict(hidden_dim=256, batch_size=64)

# The bandit is cheap per step, so it trades width for a larger batch; the large
# eta keeps the max-ent policy spread over both bands while the critic learns them.
BANDIT = dict(
    env="bandit1d",
    hidden_dim=64,
    batch_size=256,
    steps=16_000,
    capacity=16_000,
    lr=3e-3,
    eta=15.0,
    seed_frames=500,
    exploration_steps=3000,
    log_interval=2000,
    hist_interval=2000,
    eval_episodes=100,
)

PIXELS = dict(
    DESK,
    env="pointmass-pixels",
    steps=50_000,
    capacity=25_000,
    seed_frames=2000,
    exploration_steps=4000,
    log_interval=2000,
    dormant_interval=1000,
)

POINTMASS = dict(PIXELS, env="pointmass")

SEEDS = (0, 1, 2, 3)


@dataclass(frozen=True)
class PresetRun:
    name: str
    config: Config


def _runs(base: dict, variants: list[tuple[str, dict]], seeds) -> list[PresetRun]:
    out = []
    for label, extra in variants:
        for s in seeds:
            cfg = Config(**{**base, **extra, "seed": s})
            out.append(PresetRun(f"{label}/seed{s}", cfg))
    return out


def toy_bandit_compare(seeds=SEEDS) -> list[PresetRun]:
    variants = [(v, {"actor_variant": v}) for v in ("consistency_ac", "maxent_cp_uniform", "gaussian_maxent")]
    return _runs(BANDIT, variants, seeds)


def dormant_study(seeds=SEEDS) -> list[PresetRun]:
    runs = []
    for env_base in (POINTMASS, PIXELS):
        env = env_base["env"]
        variants = [
            (f"{env}/consistency_only", {"actor_variant": "consistency_ac", "loss_mode": "consistency_only"}),
            (f"{env}/q_loss", {"actor_variant": "consistency_ac"}),
        ]
        runs += _runs(env_base, variants, seeds)
    return runs


def ablations(seeds=SEEDS) -> list[PresetRun]:
    variants = [(v, {"actor_variant": v}) for v in ("cp3er", "consistency_ac", "maxent_cp_uniform", "cp3er_urb")]
    return _runs(PIXELS, variants, seeds)


PRESETS = {
    "toy-bandit-compare": toy_bandit_compare,
    "dormant-study": dormant_study,
    "ablations": ablations,
}


def preset_runs(name: str, seeds=SEEDS, **overrides) -> list[PresetRun]:
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    runs = PRESETS[name](seeds)
    if overrides:
        runs = [PresetRun(r.name, r.config.replace(**overrides)) for r in runs]
    return runs


def preset_run(name: str, out_dir: str | Path, seeds=SEEDS, **overrides) -> dict[str, RunRecord]:
    """Run every member of a preset sequentially, one sub-directory each."""
    out = Path(out_dir)
    records = {}
    for run in preset_runs(name, seeds, **overrides):
        log.info("preset %s: %s", name, run.name)
        records[run.name] = train(run.config, out / run.name)
    return records
