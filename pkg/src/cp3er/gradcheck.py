"""Central finite differences, used as the independent oracle for autodiff."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import ndgrad as nd


def numerical_grad(fn: Callable[[], float], arrays: Sequence[np.ndarray], step: float = 1e-5) -> list[np.ndarray]:
    """Estimate d fn / d array for each array by perturbing it in place.

    ``fn`` must recompute its scalar output from the current contents of
    ``arrays`` and must be deterministic (reseed any RNG inside it).
    """
    out = []
    for arr in arrays:
        g = np.zeros(arr.shape)
        for i in np.ndindex(arr.shape):
            orig = arr[i]
            arr[i] = orig + step
            hi = fn()
            arr[i] = orig - step
            lo = fn()
            arr[i] = orig
            g[i] = (hi - lo) / (2.0 * step)
        out.append(g)
    return out


def autodiff_grad(loss_fn: Callable[[], nd.Tensor], params: Sequence[nd.Tensor]) -> list[np.ndarray]:
    """Gradients of ``loss_fn()`` w.r.t. ``params`` via a fresh tape."""
    for p in params:
        p.grad = None
    with nd.use_tape() as tape:
        loss = loss_fn()
        tape.backward(loss)
    grads = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    for p in params:
        p.grad = None
    return grads


def max_rel_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> float:
    """``max |a - b| / max(|a|, |b|, floor)`` elementwise.

    The floor keeps entries near zero, where central differences carry
    roundoff of order 1e-11, from dominating the ratio.
    """
    scale = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / scale))


def check(loss_fn: Callable[[], nd.Tensor], params: Sequence[nd.Tensor], step: float = 1e-5) -> float:
    """Worst relative error between autodiff and central differences."""
    auto = autodiff_grad(loss_fn, params)
    with nd.no_grad():
        num = numerical_grad(lambda: float(loss_fn().data), [p.data for p in params], step)
    return max(max_rel_error(a, n) for a, n in zip(auto, num))
