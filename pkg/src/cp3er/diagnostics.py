"""Dormant-neuron measurement and the metrics CSV log."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

METRICS_HEADER = (
    "step",
    "episode",
    "return",
    "success",
    "actor_loss",
    "critic_loss",
    "consistency_loss",
    "q_mean",
    "dormant_ratio",
    "beta_mean",
    "fps",
)


def neuron_scores(activations: np.ndarray) -> np.ndarray:
    """Mean |activation| per neuron divided by the layer average of that quantity.

    A layer whose activations are all zero scores 0 everywhere.
    """
    h = np.asarray(activations, dtype=np.float64)
    if h.ndim != 2 or h.shape[0] == 0:
        raise ValueError("neuron_scores needs a non-empty [batch, neurons] array")
    per = np.abs(h).mean(axis=0)
    layer = per.mean()
    if layer == 0.0:
        return np.zeros_like(per)
    return per / layer


@dataclass
class LayerReport:
    neurons: int
    dormant: int
    scores: np.ndarray


@dataclass
class DormantReport:
    layers: list[LayerReport]
    threshold: float
    probe_size: int
    ratio: float = field(init=False)

    def __post_init__(self):
        total = sum(layer.neurons for layer in self.layers)
        self.ratio = sum(layer.dormant for layer in self.layers) / total if total else 0.0


def dormant_report(layer_activations: Sequence[np.ndarray], threshold: float = 0.025) -> DormantReport:
    """Fraction of neurons, over all given layers, scoring below ``threshold``."""
    layers = []
    probe = 0
    for h in layer_activations:
        s = neuron_scores(h)
        layers.append(LayerReport(s.size, int(np.count_nonzero(s < threshold)), s))
        probe = h.shape[0]
    return DormantReport(layers, threshold, probe)


def dormant_ratio(policy, probe_feats: np.ndarray, threshold: float, rng: np.random.Generator) -> DormantReport:
    """Probe the policy MLP's hidden layers on ``probe_feats``.

    Consistency policies see fresh ``a^K ~ N(0, K^2 I)`` at ``tau = K``, i.e.
    the input they get at inference. Runs outside the gradient tape.
    """
    from . import ndgrad as nd
    from .actor import ConsistencyActor
    from .consistency import consistency_fn

    acts: list[np.ndarray] = []
    feats = nd.Tensor(np.asarray(probe_feats, dtype=np.float64))
    with nd.no_grad():
        if isinstance(policy, ConsistencyActor):
            sched = policy.schedule
            a_k = sched.K * rng.standard_normal((feats.shape[0], policy.action_dim))
            consistency_fn(policy.net, sched, feats, a_k, sched.K, capture=acts)
        else:
            policy.net(feats, capture=acts)
    return dormant_report(acts, threshold)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return ""
    return repr(v)


class MetricsLog:
    """Buffered CSV writer with the fixed metrics header."""

    def __init__(self, path: str | Path | None, flush_every: int = 10):
        self.path = Path(path) if path is not None else None
        self.flush_every = flush_every
        self.rows: list[dict] = []
        self._pending: list[dict] = []
        self._last_step = -1
        if self.path is not None:
            try:
                with open(self.path, "w", newline="") as fh:
                    fh.write(",".join(METRICS_HEADER) + "\n")
            except OSError as exc:
                raise OSError(f"cannot write metrics to {self.path}: {exc}") from exc

    def append(self, step: int, **values) -> None:
        if step < self._last_step:
            raise ValueError(f"metrics step went backwards: {step} < {self._last_step}")
        unknown = set(values) - set(METRICS_HEADER)
        if unknown:
            raise KeyError(f"unknown metric columns {sorted(unknown)}")
        self._last_step = step
        row = {"step": step, **values}
        self.rows.append(row)
        self._pending.append(row)
        if len(self._pending) >= self.flush_every:
            self.flush()

    def flush(self) -> None:
        if self.path is None or not self._pending:
            self._pending.clear()
            return
        try:
            with open(self.path, "a", newline="") as fh:
                for row in self._pending:
                    fh.write(",".join(_fmt(row.get(k)) for k in METRICS_HEADER) + "\n")
        except OSError as exc:
            raise OSError(f"cannot write metrics to {self.path}: {exc}") from exc
        self._pending.clear()


def metrics_append(log: MetricsLog, step: int, **values) -> None:
    log.append(step, **values)


def read_metrics(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
