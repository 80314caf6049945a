"""Pure-numpy implementations of the hot kernels.

Every function here has a compiled twin in ``_ckernels.pyx`` with an
identical signature. Results match bit for bit except ``ppe_weights``,
where libm and numpy ``exp`` may differ in the last ulp.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def im2col(x: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """Unfold ``x[B, C, H, W]`` into rows of receptive fields.

    Returns an array of shape ``(B * oh * ow, C * kh * kw)`` whose rows are
    ordered batch-major, then output row, then output column.
    """
    b, c, h, w = x.shape
    oh = (h - kh) // stride + 1
    ow = (w - kw) // stride + 1
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    win = win[:, :, :oh, :ow]
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(b * oh * ow, c * kh * kw)


def col2im(cols: np.ndarray, x_shape: tuple, kh: int, kw: int, stride: int) -> np.ndarray:
    """Adjoint of :func:`im2col`: scatter-add rows back onto the input grid."""
    b, c, h, w = x_shape
    oh = (h - kh) // stride + 1
    ow = (w - kw) // stride + 1
    d = cols.reshape(b, oh, ow, c, kh, kw).transpose(0, 3, 1, 2, 4, 5)
    out = np.zeros((b, c, h, w), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += d[:, :, :, :, i, j]
    return out


def random_shift(frames: np.ndarray, pad: int, shifts: np.ndarray) -> np.ndarray:
    """Replicate-pad ``frames[B, C, H, W]`` by ``pad`` and crop at ``shifts[B, 2]``.

    ``shifts[b] = (dy, dx)`` with each offset in ``[0, 2 * pad]``; ``(pad, pad)``
    is the identity.
    """
    b, c, h, w = frames.shape
    padded = np.pad(frames, ((0, 0), (0, 0), (pad, pad), (pad, pad)), mode="edge")
    rows = shifts[:, 0, None] + np.arange(h)[None, :]
    cols = shifts[:, 1, None] + np.arange(w)[None, :]
    out = padded[np.arange(b)[:, None, None], :, rows[:, :, None], cols[:, None, :]]
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def nstep_returns(
    rewards: np.ndarray,
    dones: np.ndarray,
    terminals: np.ndarray,
    indices: np.ndarray,
    n: int,
    gamma: float,
    newest: int,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Discounted n-step reward sums over a ring buffer.

    The window starting at each index stops early at an episode boundary or at
    the newest stored item. A terminal transition zeroes the bootstrap
    discount. Returns ``(reward_sum, discount, last_index)``.
    """
    cap = rewards.shape[0]
    m = indices.shape[0]
    ret = np.zeros(m, dtype=np.float64)
    disc = np.ones(m, dtype=np.float64)
    last = np.empty(m, dtype=np.int64)
    for row in range(m):
        acc = 0.0
        g = 1.0
        k = int(indices[row])
        for j in range(n):
            k = (int(indices[row]) + j) % cap
            acc += g * rewards[k]
            g *= gamma
            if terminals[k]:
                g = 0.0
                break
            if dones[k] or k == newest:
                break
        ret[row] = acc
        disc[row] = g
        last[row] = k
    return ret, disc, last


def ppe_weights(insert_steps: np.ndarray, current_step: int, alpha: float, capacity: int) -> np.ndarray:
    """Recency sampling weights ``1 / (1 + exp(2a - 2a|B| / dt))`` with ``dt >= 1``."""
    dt = np.maximum(current_step - insert_steps, 1).astype(np.float64)
    x = 2.0 * alpha - (alpha * 2.0 * capacity) / dt
    out = np.empty_like(x)
    neg = x <= 0.0
    out[neg] = 1.0 / (1.0 + np.exp(x[neg]))
    e = np.exp(-x[~neg])
    out[~neg] = e / (e + 1.0)
    return out
