"""Time the compiled kernels against the numpy fallback.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from cp3er.kernels import _pykernels

try:
    from cp3er.kernels import _ckernels
except ImportError:
    _ckernels = None


def cases(rng: np.random.Generator) -> dict:
    frames = rng.random((64, 9, 32, 32))
    shifts = rng.integers(0, 9, size=(64, 2)).astype(np.int64)
    conv_in = rng.random((64, 9, 32, 32))
    cols = _pykernels.im2col(conv_in, 3, 3, 2)
    cap = 100_000
    rewards = rng.normal(size=cap)
    dones = rng.random(cap) < 0.005
    terminals = np.zeros(cap, dtype=bool)
    idx = rng.integers(0, cap, size=256).astype(np.int64)
    steps = np.arange(cap, dtype=np.int64)
    return {
        "random_shift[64x9x32x32]": lambda k: k.random_shift(frames, 4, shifts),
        "im2col[64x9x32x32,3x3/2]": lambda k: k.im2col(conv_in, 3, 3, 2),
        "col2im[64x9x32x32,3x3/2]": lambda k: k.col2im(cols, conv_in.shape, 3, 3, 2),
        "nstep_returns[256 rows,n=3]": lambda k: k.nstep_returns(rewards, dones, terminals, idx, 3, 0.99, cap - 1),
        "ppe_weights[1e5]": lambda k: k.ppe_weights(steps, cap, 2.0, cap),
    }


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    backends = [("python", _pykernels)] + ([("cython", _ckernels)] if _ckernels else [])
    print(f"{'kernel':32s}" + "".join(f"{name:>14s}" for name, _ in backends) + "   speedup")
    for label, fn in cases(np.random.default_rng(0)).items():
        times = []
        for _, mod in backends:
            fn(mod)  # warm up
            times.append(min(timeit.repeat(lambda: fn(mod), number=1, repeat=args.repeat)))
        row = f"{label:32s}" + "".join(f"{t * 1e3:12.3f}ms" for t in times)
        if len(times) == 2:
            row += f"   {times[0] / times[1]:6.1f}x"
        print(row)
    if _ckernels is None:
        print("compiled extension not built; only the fallback was timed")


if __name__ == "__main__":
    main()
