"""Merge operators that collapse a cluster of adapters into one adapter.

All arithmetic runs in float64 with a fixed accumulation order (ascending
input index) and is cast to float32 once at the end, so results do not
depend on the kernel backend or on chunking.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _kernels
from .errors import SchemaError
from .tensors import AdapterMeta, LoraAdapter, check_same_schema, flatten, unflatten

MERGE_METHODS = ("linear", "ties", "dare")


@dataclass(frozen=True)
class MergeConfig:
    """Method plus parameters for one merge operation.

    ``density`` is the fraction of coordinates TIES keeps; ``drop_rate`` the
    DARE drop probability; ``weights`` per-input coefficients (None = all
    1.0); ``rng_seed`` seeds DARE's drop masks.
    """

    method: str = "ties"
    density: float = 0.5
    drop_rate: float = 0.0
    weights: tuple[float, ...] | None = None
    rng_seed: int = 0

    def __post_init__(self):
        if self.method not in MERGE_METHODS:
            raise ValueError(f"unknown merge method {self.method!r}")
        if not (0.0 < self.density <= 1.0):
            raise ValueError(f"density must be in (0, 1], got {self.density}")
        if not (0.0 <= self.drop_rate < 1.0):
            raise ValueError(f"drop_rate must be in [0, 1), got {self.drop_rate}")
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=np.float64)
            if w.size == 0 or np.any(w < 0) or not np.any(w > 0):
                raise ValueError("weights must be non-negative with at least one positive")

    def digest(self) -> str:
        """Canonical string identifying the merge behaviour (cache key part)."""
        return json.dumps(
            {
                "method": self.method,
                "density": self.density,
                "drop_rate": self.drop_rate,
                "weights": list(self.weights) if self.weights is not None else None,
                "rng_seed": self.rng_seed,
            },
            sort_keys=True,
            separators=(",", ":"),
        )


def _stack(vectors: Sequence[np.ndarray]) -> np.ndarray:
    if not vectors:
        raise ValueError("need at least one vector")
    dim = np.asarray(vectors[0]).size
    for i, v in enumerate(vectors):
        if np.asarray(v).size != dim:
            raise ValueError(f"vector {i} has length {np.asarray(v).size}, expected {dim}")
    return np.stack([np.asarray(v, dtype=np.float32).ravel() for v in vectors]).astype(np.float64)


def _resolve_weights(weights, count: int) -> np.ndarray:
    if weights is None:
        return np.ones(count, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (count,):
        raise ValueError(f"got {w.size} weights for {count} inputs")
    if np.any(w < 0) or not np.any(w > 0):
        raise ValueError("weights must be non-negative with at least one positive")
    return w


def _canonicalize(stacked: np.ndarray, weights: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Reorder (vector, weight) pairs by value.

    Accumulation then runs in an order independent of how the caller listed
    the inputs, which is what makes permutation invariance bit-exact.
    """
    k = stacked.shape[0]
    keys = [(stacked[t].tobytes(), float(weights[t]).hex()) for t in range(k)]
    order = sorted(range(k), key=keys.__getitem__)
    return stacked[order], weights[order]


def linear_merge(vectors: Sequence[np.ndarray], weights=None) -> np.ndarray:
    """Coordinatewise weighted mean; weights are normalized to sum 1."""
    stacked = _stack(vectors)
    w = _resolve_weights(weights, stacked.shape[0])
    stacked, w = _canonicalize(stacked, w)
    out = _kernels.weighted_sum_rows(stacked, w / w.sum())
    return out.astype(np.float32)


def trim_count(density: float, dim: int) -> int:
    """Number of coordinates TIES keeps per vector: ceil(density * dim)."""
    return min(dim, max(1, int(math.ceil(density * dim))))


def ties_merge(vectors: Sequence[np.ndarray], density: float, weights=None) -> np.ndarray:
    """TIES: trim per vector, elect a per-coordinate sign, average aligned values.

    Weights scale the task vectors before trimming and are normalized to
    mean 1, so uniform weights leave the vectors untouched and rescaling
    all weights changes nothing.
    """
    if not (0.0 < density <= 1.0):
        raise ValueError(f"density must be in (0, 1], got {density}")
    stacked = _stack(vectors)
    k, dim = stacked.shape
    w = _resolve_weights(weights, k)
    stacked, w = _canonicalize(stacked, w)
    weighted = stacked * (w * (k / w.sum()))[:, None]
    mask = _kernels.trim_mask(np.abs(weighted), trim_count(density, dim))
    out = _kernels.ties_combine(weighted, mask)
    return out.astype(np.float32)


def _dare_rng(rng_seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng((int(rng_seed) & 0xFFFFFFFFFFFFFFFF, index))


def dare_merge(
    vectors: Sequence[np.ndarray], drop_rate: float, weights=None, rng_seed: int = 0
) -> np.ndarray:
    """DARE: drop coordinates per input, rescale survivors, then linear merge.

    Input ``t`` gets its own PRNG stream seeded from ``(rng_seed, t)``, so
    the same call is bit-for-bit reproducible.
    """
    if not (0.0 <= drop_rate < 1.0):
        raise ValueError(f"drop_rate must be in [0, 1), got {drop_rate}")
    stacked = _stack(vectors)
    k, dim = stacked.shape
    _resolve_weights(weights, k)
    scale = 1.0 / (1.0 - drop_rate)
    dropped = []
    for t in range(k):
        keep = _dare_rng(rng_seed, t).random(dim) >= drop_rate
        dropped.append(np.where(keep, stacked[t] * scale, 0.0).astype(np.float32))
    return linear_merge(dropped, weights)


def _merged_meta(inputs: Sequence[LoraAdapter], task_id: str | None) -> AdapterMeta:
    if task_id is None:
        task_id = "+".join(sorted(a.task_id for a in inputs))
    groups = {a.meta.group_label for a in inputs}
    langs = {a.meta.lang_label for a in inputs}
    return AdapterMeta(
        task_id=task_id,
        rank=inputs[0].meta.rank,
        alpha=inputs[0].meta.alpha,
        group_label=groups.pop() if len(groups) == 1 else None,
        lang_label=langs.pop() if len(langs) == 1 else None,
    )


def merge(
    inputs: Sequence[LoraAdapter], cfg: MergeConfig, task_id: str | None = None
) -> LoraAdapter:
    """Merge schema-identical adapters into one adapter of the same schema.

    A single input is returned unchanged (trimming a lone adapter would only
    degrade it).  With uniform weights the result is invariant to input
    order.
    """
    if not inputs:
        raise ValueError("merge needs at least one adapter")
    schema = check_same_schema(inputs)
    if len(inputs) == 1:
        return inputs[0]
    flats = [flatten(a) for a in inputs]
    if cfg.weights is not None and len(cfg.weights) != len(inputs):
        raise ValueError(f"config has {len(cfg.weights)} weights for {len(inputs)} inputs")
    if cfg.method == "linear":
        merged = linear_merge(flats, cfg.weights)
    elif cfg.method == "ties":
        merged = ties_merge(flats, cfg.density, cfg.weights)
    else:
        merged = dare_merge(flats, cfg.drop_rate, cfg.weights, cfg.rng_seed)
    return unflatten(merged, schema, _merged_meta(inputs, task_id))
