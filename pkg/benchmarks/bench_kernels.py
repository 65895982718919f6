#!/usr/bin/env python3
"""Time the numba kernels against their pure-numpy fallbacks.

Run from the repository root:

    python3 benchmarks/bench_kernels.py [--repeats 5]

Sizes approximate merging 8 rank-32 adapters: the flattened parameter
vector of a real adapter easily reaches 10^5..10^6 coordinates.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from lorapack import _kernels


def best_of(fn, repeats: int) -> float:
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times)


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    if _kernels.trim_mask_numba is None:
        print("numba backend unavailable; nothing to compare")
        return 1
    _kernels.warmup()

    rng = np.random.default_rng(0)
    rows = []
    for dim in (10_000, 100_000, 1_000_000):
        k = 8
        vectors = rng.normal(size=(k, dim))
        absvals = np.abs(vectors)
        keep = dim // 2
        mask = _kernels.trim_mask_numpy(absvals, keep)
        weights = np.full(k, 1.0 / k)

        cases = {
            f"trim_mask        k={k} dim={dim:>7}": (
                lambda: _kernels.trim_mask_numpy(absvals, keep),
                lambda: _kernels.trim_mask_numba(absvals, keep),
            ),
            f"ties_combine     k={k} dim={dim:>7}": (
                lambda: _kernels.ties_combine_numpy(vectors, mask),
                lambda: _kernels.ties_combine_numba(vectors, mask),
            ),
            f"weighted_sum     k={k} dim={dim:>7}": (
                lambda: _kernels.weighted_sum_rows_numpy(vectors, weights),
                lambda: _kernels.weighted_sum_rows_numba(vectors, weights),
            ),
        }
        if dim <= 100_000:
            points = rng.normal(size=(40, dim))
            centers = rng.normal(size=(5, dim))
            cases[f"pairwise_dists   n=40 dim={dim:>7}"] = (
                lambda: _kernels.pairwise_sq_dists_numpy(points, centers),
                lambda: _kernels.pairwise_sq_dists_numba(points, centers),
            )
        for name, (numpy_fn, numba_fn) in cases.items():
            t_numpy = best_of(numpy_fn, args.repeats)
            t_numba = best_of(numba_fn, args.repeats)
            rows.append((name, t_numpy, t_numba))

    print(f"{'kernel':<36} {'numpy (ms)':>12} {'numba (ms)':>12} {'speedup':>9}")
    for name, t_numpy, t_numba in rows:
        print(f"{name:<36} {t_numpy * 1e3:>12.3f} {t_numba * 1e3:>12.3f} "
              f"{t_numpy / t_numba:>8.2f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
