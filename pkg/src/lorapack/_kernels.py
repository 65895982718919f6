"""Numeric kernels, each in a numba and a pure-numpy version.

The active backend is chosen once at import from the ``LORAPACK_BACKEND``
environment variable: ``auto`` (default, numba if importable), ``numba``,
or ``numpy``.  Both versions of every merge kernel accumulate in float64 in
ascending input order, so merge results are bit-identical across backends.
Distance kernels are deterministic per backend but may differ between
backends by rounding (numpy reduces pairwise, the jit loops sequentially).

``benchmarks/bench_kernels.py`` times the two versions side by side.
"""

from __future__ import annotations

import os

import numpy as np

BACKEND_ENV = "LORAPACK_BACKEND"

_choice = os.environ.get(BACKEND_ENV, "auto").strip().lower()
if _choice not in ("auto", "numba", "numpy"):
    raise ImportError(f"{BACKEND_ENV} must be 'auto', 'numba' or 'numpy', got {_choice!r}")

_njit = None
if _choice in ("auto", "numba"):
    try:
        from numba import njit as _njit
    except ImportError:
        if _choice == "numba":
            raise
        _njit = None

_ACTIVE = "numba" if _njit is not None else "numpy"


def active_backend() -> str:
    """Name of the backend the public kernel aliases dispatch to."""
    return _ACTIVE


# ---------------------------------------------------------------------------
# numpy versions


def trim_mask_numpy(absvals: np.ndarray, keep: int) -> np.ndarray:
    """Per row, mark the ``keep`` largest-magnitude coordinates.

    Ties at the cutoff magnitude are resolved toward lower flat indices.
    """
    k, dim = absvals.shape
    mask = np.zeros((k, dim), dtype=np.bool_)
    if keep >= dim:
        mask[:] = True
        return mask
    for t in range(k):
        row = absvals[t]
        thr = np.partition(row, dim - keep)[dim - keep]
        gt = row > thr
        need = keep - int(gt.sum())
        mask[t] = gt
        if need > 0:
            at_thr = np.flatnonzero(row == thr)[:need]
            mask[t, at_thr] = True
    return mask


def ties_combine_numpy(weighted: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Sign election and sign-aligned mean over trimmed weighted vectors."""
    k, dim = weighted.shape
    kept = np.where(mask, weighted, 0.0)
    total = np.zeros(dim, dtype=np.float64)
    for t in range(k):
        total += kept[t]
    positive = total > 0.0
    negative = total < 0.0
    aligned_sum = np.zeros(dim, dtype=np.float64)
    aligned_count = np.zeros(dim, dtype=np.int64)
    for t in range(k):
        row = kept[t]
        aligned = (positive & (row > 0.0)) | (negative & (row < 0.0))
        aligned_sum += np.where(aligned, row, 0.0)
        aligned_count += aligned
    out = aligned_sum / np.maximum(aligned_count, 1)
    out[aligned_count == 0] = 0.0
    return out


def weighted_sum_rows_numpy(vectors: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Sequential ``sum_t weights[t] * vectors[t]`` in float64."""
    k, dim = vectors.shape
    out = np.zeros(dim, dtype=np.float64)
    for t in range(k):
        out += weights[t] * vectors[t]
    return out


def sq_euclidean_numpy(a: np.ndarray, b: np.ndarray) -> float:
    d = a - b
    return float(np.sum(d * d))


def pairwise_sq_dists_numpy(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - centers[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


# ---------------------------------------------------------------------------
# numba versions

trim_mask_numba = None
ties_combine_numba = None
weighted_sum_rows_numba = None
sq_euclidean_numba = None
pairwise_sq_dists_numba = None

if _njit is not None:

    @_njit(cache=True)
    def trim_mask_numba(absvals, keep):  # noqa: F811
        k, dim = absvals.shape
        mask = np.zeros((k, dim), dtype=np.bool_)
        if keep >= dim:
            mask[:] = True
            return mask
        for t in range(k):
            row = absvals[t]
            thr = np.partition(row, dim - keep)[dim - keep]
            need = keep
            for j in range(dim):
                if row[j] > thr:
                    mask[t, j] = True
                    need -= 1
            if need > 0:
                for j in range(dim):
                    if row[j] == thr:
                        mask[t, j] = True
                        need -= 1
                        if need == 0:
                            break
        return mask

    @_njit(cache=True)
    def ties_combine_numba(weighted, mask):  # noqa: F811
        k, dim = weighted.shape
        out = np.zeros(dim, dtype=np.float64)
        for j in range(dim):
            total = 0.0
            for t in range(k):
                if mask[t, j]:
                    total += weighted[t, j]
            if total > 0.0:
                acc = 0.0
                count = 0
                for t in range(k):
                    if mask[t, j] and weighted[t, j] > 0.0:
                        acc += weighted[t, j]
                        count += 1
                out[j] = acc / count
            elif total < 0.0:
                acc = 0.0
                count = 0
                for t in range(k):
                    if mask[t, j] and weighted[t, j] < 0.0:
                        acc += weighted[t, j]
                        count += 1
                out[j] = acc / count
        return out

    @_njit(cache=True)
    def weighted_sum_rows_numba(vectors, weights):  # noqa: F811
        k, dim = vectors.shape
        out = np.zeros(dim, dtype=np.float64)
        for t in range(k):
            w = weights[t]
            for j in range(dim):
                out[j] += w * vectors[t, j]
        return out

    @_njit(cache=True)
    def sq_euclidean_numba(a, b):  # noqa: F811
        acc = 0.0
        for j in range(a.shape[0]):
            d = a[j] - b[j]
            acc += d * d
        return acc

    @_njit(cache=True)
    def pairwise_sq_dists_numba(points, centers):  # noqa: F811
        n, dim = points.shape
        m = centers.shape[0]
        out = np.empty((n, m), dtype=np.float64)
        for i in range(n):
            for c in range(m):
                acc = 0.0
                for j in range(dim):
                    d = points[i, j] - centers[c, j]
                    acc += d * d
                out[i, c] = acc
        return out


# ---------------------------------------------------------------------------
# public aliases

# numpy's introselect-based partition beats the jit version at every size
# (see benchmarks/bench_kernels.py), so trim selection always uses numpy;
# both versions produce identical masks either way.
trim_mask = trim_mask_numpy

if _ACTIVE == "numba":
    ties_combine = ties_combine_numba
    weighted_sum_rows = weighted_sum_rows_numba
    sq_euclidean = sq_euclidean_numba
    pairwise_sq_dists = pairwise_sq_dists_numba
else:
    ties_combine = ties_combine_numpy
    weighted_sum_rows = weighted_sum_rows_numpy
    sq_euclidean = sq_euclidean_numpy
    pairwise_sq_dists = pairwise_sq_dists_numpy


def warmup() -> None:
    """Trigger jit compilation on tiny inputs so first real calls are fast."""
    v = np.array([[1.0, -2.0], [0.5, 0.25]])
    m = trim_mask(np.abs(v), 1)
    ties_combine(v, m)
    weighted_sum_rows(v, np.array([0.5, 0.5]))
    sq_euclidean(v[0], v[1])
    pairwise_sq_dists(v, v)
    if trim_mask_numba is not None:
        trim_mask_numba(np.abs(v), 1)
