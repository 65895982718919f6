"""Data-free baseline clusterers: K-Means on weights or on SVD-cosine features."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import LorapackError
from .partition import PartitionMap
from .tensors import AdapterSet, flatten


@dataclass(frozen=True)
class FeatureMatrix:
    """One feature row per adapter; ``source`` names the construction."""

    rows: np.ndarray
    source: str

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.float64)
        if rows.ndim != 2 or rows.shape[0] < 1:
            raise ValueError(f"feature matrix must be 2-D and non-empty, got {rows.shape}")
        if not np.isfinite(rows).all():
            raise ValueError("feature matrix contains non-finite values")
        rows.setflags(write=False)
        object.__setattr__(self, "rows", rows)

    @property
    def n(self) -> int:
        return self.rows.shape[0]


def features_flat(adapter_set: AdapterSet) -> FeatureMatrix:
    """Row t = the flattened weight vector of adapter t."""
    rows = np.stack([flatten(a) for a in adapter_set]).astype(np.float64)
    return FeatureMatrix(rows, "flat_weights")


def _svd_feature(adapter, top_k: int) -> np.ndarray:
    scale = adapter.meta.alpha / adapter.meta.rank
    parts = []
    for layer in adapter.layer_names():
        a = adapter.weights[layer + ".lora_A"].astype(np.float64)
        b = adapter.weights[layer + ".lora_B"].astype(np.float64)
        delta = scale * (b @ a)
        try:
            _, sing, vh = np.linalg.svd(delta, full_matrices=False)
        except np.linalg.LinAlgError as exc:
            raise LorapackError(
                f"SVD did not converge for adapter {adapter.task_id!r}, layer {layer!r}"
            ) from exc
        for i in range(min(top_k, sing.size)):
            v = vh[i]
            pivot = int(np.argmax(np.abs(v)))
            if v[pivot] < 0:
                v = -v
            parts.append(sing[i] * v)
    return np.concatenate(parts)


def features_svd(adapter_set: AdapterSet, top_k: int | None = None) -> FeatureMatrix:
    """Rows of the pairwise cosine-similarity matrix of per-layer SVD features.

    Each layer contributes its ``top_k`` singular values times the matching
    right singular vectors of ``(alpha/rank) * B @ A``, sign-canonicalized so
    the largest-magnitude entry is positive.
    """
    rank = adapter_set[0].meta.rank
    if top_k is None:
        top_k = min(4, rank)
    if not (1 <= top_k <= rank):
        raise ValueError(f"top_k must be in [1, rank={rank}], got {top_k}")
    raw = np.stack([_svd_feature(a, top_k) for a in adapter_set])
    norms = np.linalg.norm(raw, axis=1)
    unit = raw / np.where(norms > 0, norms, 1.0)[:, None]
    return FeatureMatrix(unit @ unit.T, "svd_cosine")


@dataclass
class KMeansResult:
    partition: PartitionMap
    centers: np.ndarray
    inertia: float
    inertia_history: list[float] = field(default_factory=list)
    n_iter: int = 0


def _plus_plus_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = _kernels.pairwise_sq_dists(points, points[chosen[-1] : chosen[-1] + 1])[:, 0]
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = int(rng.choice(n, p=d2 / total))
        else:
            idx = int(rng.integers(n))
        chosen.append(idx)
        nd2 = _kernels.pairwise_sq_dists(points, points[idx : idx + 1])[:, 0]
        d2 = np.minimum(d2, nd2)
    return points[chosen].copy()


def kmeans(
    features: FeatureMatrix | np.ndarray,
    k: int,
    rng: np.random.Generator,
    max_iters: int = 100,
    tol: float = 1e-6,
) -> KMeansResult:
    """Lloyd's algorithm with k-means++ seeding.

    Empty clusters are repaired by donating the point currently farthest
    from its centroid, which keeps the per-step inertia non-increasing (the
    donated point becomes its new cluster's centroid).  Deterministic given
    the rng state.
    """
    points = features.rows if isinstance(features, FeatureMatrix) else np.asarray(
        features, dtype=np.float64
    )
    if points.ndim != 2:
        raise ValueError(f"features must be 2-D, got shape {points.shape}")
    if not np.isfinite(points).all():
        raise ValueError("features contain non-finite values")
    n = points.shape[0]
    if k < 1:
        raise ValueError(f"K must be >= 1, got {k}")
    if n < k:
        raise ValueError(f"need at least K={k} rows, got {n}")

    centers = _plus_plus_init(points, k, rng)
    history: list[float] = []
    assign = np.zeros(n, dtype=np.int64)
    prev_inertia = np.inf
    iters_run = 0
    for _ in range(max_iters):
        iters_run += 1
        dists = _kernels.pairwise_sq_dists(points, centers)
        assign = np.argmin(dists, axis=1)

        # Donating the farthest point cannot come from a singleton cluster,
        # otherwise the donor itself would go empty.
        counts = np.bincount(assign, minlength=k)
        own = dists[np.arange(n), assign].astype(np.float64)
        for empty in range(k):
            if counts[empty] > 0:
                continue
            candidates = np.where(counts[assign] > 1, own, -np.inf)
            victim = int(np.argmax(candidates))
            counts[assign[victim]] -= 1
            assign[victim] = empty
            counts[empty] = 1
            own[victim] = -np.inf

        for c in range(k):
            centers[c] = points[assign == c].mean(axis=0)
        inertia = float(
            _kernels.pairwise_sq_dists(points, centers)[np.arange(n), assign].sum()
        )
        assert inertia <= prev_inertia + 1e-9 * max(1.0, abs(inertia)), (
            f"inertia increased: {prev_inertia} -> {inertia}"
        )
        history.append(inertia)
        if np.isfinite(prev_inertia) and prev_inertia - inertia <= tol * max(
            prev_inertia, 1e-300
        ):
            prev_inertia = inertia
            break
        prev_inertia = inertia

    partition = PartitionMap(tuple(int(c) for c in assign), k)
    return KMeansResult(partition, centers, history[-1], history, iters_run)
