"""Time the numba kernels against their numpy fallbacks on desk-scale inputs.

    python benchmarks/bench_kernels.py [--repeat 20] [--frames 17] [--size 64]

Both backends are imported side by side from ``cpsinpaint.kernels``; outputs are
checked for agreement before timing. The first numba call (compilation) is excluded.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from cpsinpaint import kernels
from cpsinpaint.metrics import gaussian_kernel


def _best(fn, args, repeat: int) -> float:
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def cases(frames: int, size: int, rng: np.random.Generator):
    mask = (rng.random((frames, size, size)) > 0.2).astype(np.uint8)
    hole = (rng.random((frames, size // 4, size // 4)) > 0.9).astype(np.uint8)
    video = rng.random((frames, size, size, 3))
    planes = rng.random((frames * 3, size, size))
    return {
        "temporal_group_min": (mask, 8),
        "spatial_block_min": (mask, 4, 4),
        "box_dilate": (hole, 1),
        "causal_pool": (video, 8, 4, 4),
        "gaussian_filter": (planes, gaussian_kernel()),
    }


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--frames", type=int, default=17)
    ap.add_argument("--size", type=int, default=64)
    args = ap.parse_args(argv)
    if kernels.NUMBA_KERNELS is None:
        print("numba is not installed; nothing to compare")
        return 1
    rng = np.random.default_rng(0)
    print(f"{'kernel':<20} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8}")
    for name, fargs in cases(args.frames, args.size, rng).items():
        f_np = getattr(kernels.NUMPY_KERNELS, name)
        f_nb = getattr(kernels.NUMBA_KERNELS, name)
        a, b = f_np(*fargs), f_nb(*fargs)
        if not np.allclose(a, b, rtol=0, atol=1e-12):
            raise SystemExit(f"{name}: backends disagree")
        t_np = _best(f_np, fargs, args.repeat)
        t_nb = _best(f_nb, fargs, args.repeat)
        print(f"{name:<20} {t_np * 1e3:>10.3f} {t_nb * 1e3:>10.3f} {t_np / t_nb:>7.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
