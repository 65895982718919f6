from __future__ import annotations

import os
import subprocess
import sys

import numpy as np
import pytest

from lorapack import _kernels


requires_numba = pytest.mark.skipif(
    _kernels.trim_mask_numba is None, reason="numba backend not available"
)


def random_cases(rng, count=50):
    for _ in range(count):
        k = int(rng.integers(1, 6))
        dim = int(rng.integers(1, 200))
        yield rng.normal(size=(k, dim))


@requires_numba
def test_trim_mask_backends_match(rng):
    for arr in random_cases(rng):
        absvals = np.abs(arr)
        keep = int(rng.integers(1, arr.shape[1] + 1))
        a = _kernels.trim_mask_numpy(absvals, keep)
        b = _kernels.trim_mask_numba(absvals, keep)
        assert np.array_equal(a, b)
        assert (a.sum(axis=1) == min(keep, arr.shape[1])).all()


@requires_numba
def test_ties_combine_backends_bitwise(rng):
    for arr in random_cases(rng):
        keep = int(rng.integers(1, arr.shape[1] + 1))
        mask = _kernels.trim_mask_numpy(np.abs(arr), keep)
        a = _kernels.ties_combine_numpy(arr, mask)
        b = _kernels.ties_combine_numba(arr, mask)
        assert a.tobytes() == b.tobytes()


@requires_numba
def test_weighted_sum_rows_backends_bitwise(rng):
    for arr in random_cases(rng):
        w = rng.uniform(0.0, 2.0, size=arr.shape[0])
        a = _kernels.weighted_sum_rows_numpy(arr, w)
        b = _kernels.weighted_sum_rows_numba(arr, w)
        assert a.tobytes() == b.tobytes()


@requires_numba
def test_distance_kernels_close_across_backends(rng):
    # Distance reductions may differ by rounding order, never more.
    for _ in range(20):
        a = rng.normal(size=300)
        b = rng.normal(size=300)
        x = _kernels.sq_euclidean_numpy(a, b)
        y = _kernels.sq_euclidean_numba(a, b)
        assert x == pytest.approx(y, rel=1e-12)
    pts = rng.normal(size=(17, 40))
    ctr = rng.normal(size=(4, 40))
    assert _kernels.pairwise_sq_dists_numpy(pts, ctr) == pytest.approx(
        _kernels.pairwise_sq_dists_numba(pts, ctr), rel=1e-12
    )


def test_active_backend_reports_a_backend():
    assert _kernels.active_backend() in ("numba", "numpy")


def test_env_flag_selects_numpy_backend():
    env = dict(os.environ, LORAPACK_BACKEND="numpy")
    out = subprocess.run(
        [sys.executable, "-c", "from lorapack import active_backend; print(active_backend())"],
        capture_output=True,
        text=True,
        env=env,
        check=True,
    )
    assert out.stdout.strip() == "numpy"


def test_trim_mask_tie_breaking_prefers_lower_index():
    absvals = np.array([[2.0, 5.0, 5.0, 2.0]])
    mask = _kernels.trim_mask_numpy(absvals, 1)
    assert mask.tolist() == [[False, True, False, False]]
    mask = _kernels.trim_mask_numpy(absvals, 3)
    assert mask.tolist() == [[True, True, True, False]]
