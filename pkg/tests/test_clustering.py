from __future__ import annotations

import numpy as np
import pytest

from lorapack import (
    AdapterMeta,
    AdapterSet,
    LoraAdapter,
    TensorMap,
    adjusted_rand_index,
    features_flat,
    features_svd,
    flatten,
    kmeans,
)
from lorapack.clustering import FeatureMatrix

from .conftest import make_adapter


def test_features_flat_delegates_to_flatten(rng):
    aset = AdapterSet([make_adapter(task_id=f"t{i}", rng=rng) for i in range(3)])
    fm = features_flat(aset)
    assert fm.source == "flat_weights"
    assert fm.rows.shape == (3, flatten(aset[0]).size)
    for i, a in enumerate(aset):
        assert np.array_equal(fm.rows[i], flatten(a).astype(np.float64))


def test_features_flat_identical_adapters_identical_rows():
    aset = AdapterSet([make_adapter(task_id="a", fill=2.0), make_adapter(task_id="b", fill=2.0)])
    fm = features_flat(aset)
    assert np.array_equal(fm.rows[0], fm.rows[1])


def test_feature_matrix_rejects_non_finite():
    with pytest.raises(ValueError, match="non-finite"):
        FeatureMatrix(np.array([[1.0, np.nan]]), "flat_weights")


def rank1_adapter(task_id, a_row, b_col, alpha=4.0):
    a = np.asarray(a_row, dtype=np.float32).reshape(1, -1)
    b = np.asarray(b_col, dtype=np.float32).reshape(-1, 1)
    return LoraAdapter(
        AdapterMeta(task_id, 1, alpha),
        TensorMap({"l0.lora_A": a, "l0.lora_B": b}),
    )


def test_svd_diagonal_is_one(rng):
    aset = AdapterSet([make_adapter(task_id=f"t{i}", rng=rng) for i in range(4)])
    fm = features_svd(aset, top_k=2)
    assert fm.source == "svd_cosine"
    assert np.allclose(np.diag(fm.rows), 1.0, atol=1e-6)


def test_svd_proportional_adapters_have_cosine_one():
    x = rank1_adapter("x", [1, 2, 3, 4], [1, -1, 2])
    y = rank1_adapter("y", [2, 4, 6, 8], [2, -2, 4])
    fm = features_svd(AdapterSet([x, y]), top_k=1)
    assert fm.rows[0, 1] == pytest.approx(1.0, abs=1e-6)


def test_svd_orthogonal_rank1_adapters_near_zero():
    x = rank1_adapter("x", [1, 0, 0, 0], [1, 2, -1])
    y = rank1_adapter("y", [0, 1, 0, 0], [1, 2, -1])
    fm = features_svd(AdapterSet([x, y]), top_k=1)
    assert abs(fm.rows[0, 1]) <= 1e-6


def test_svd_rescaling_invariance(rng):
    adapters = [make_adapter(task_id=f"t{i}", rng=rng) for i in range(3)]
    base = features_svd(AdapterSet(adapters), top_k=2).rows
    scaled_first = LoraAdapter(
        adapters[0].meta,
        TensorMap([(n, 3.0 * arr) for n, arr in adapters[0].weights]),
    )
    scaled = features_svd(AdapterSet([scaled_first, *adapters[1:]]), top_k=2).rows
    assert np.allclose(base, scaled, atol=1e-6)


def test_svd_top_k_validation():
    aset = AdapterSet([make_adapter(task_id="a"), make_adapter(task_id="b", fill=2.0)])
    with pytest.raises(ValueError, match="top_k"):
        features_svd(aset, top_k=5)


def blobs(rng, centers, per=30, scale=1.0):
    pts = np.concatenate(
        [c + scale * rng.normal(size=(per, len(c))) for c in np.asarray(centers, dtype=float)]
    )
    labels = np.repeat(np.arange(len(centers)), per)
    return pts, labels


def test_kmeans_k1_inertia_is_total_sse(rng):
    pts = rng.normal(size=(25, 4))
    result = kmeans(pts, 1, np.random.default_rng(0))
    sse = float(((pts - pts.mean(axis=0)) ** 2).sum())
    assert result.inertia == pytest.approx(sse, rel=1e-10)
    assert result.partition.assignment == (0,) * 25


def test_kmeans_k_equals_n_zero_inertia(rng):
    pts = rng.normal(size=(8, 3))
    result = kmeans(pts, 8, np.random.default_rng(1))
    assert result.inertia == pytest.approx(0.0, abs=1e-12)
    assert sorted(result.partition.assignment) == list(range(8))


def test_kmeans_recovers_blobs(rng):
    pts, labels = blobs(rng, [[0, 0], [10, 0], [0, 10]])
    hits = 0
    for seed in range(20):
        result = kmeans(pts, 3, np.random.default_rng(seed))
        hits += adjusted_rand_index(result.partition.assignment, labels.tolist()) == 1.0
    assert hits >= 19


def test_kmeans_inertia_history_non_increasing(rng):
    pts = rng.normal(size=(60, 5))
    result = kmeans(pts, 4, np.random.default_rng(3))
    history = result.inertia_history
    assert all(b <= a + 1e-9 for a, b in zip(history, history[1:]))
    assert result.inertia == history[-1]


def test_kmeans_deterministic(rng):
    pts = rng.normal(size=(30, 3))
    a = kmeans(pts, 3, np.random.default_rng(11))
    b = kmeans(pts, 3, np.random.default_rng(11))
    assert a.partition == b.partition
    assert a.inertia == b.inertia


def test_kmeans_row_permutation_up_to_relabeling(rng):
    pts, _ = blobs(rng, [[0, 0], [12, 0], [0, 12]], per=20)
    perm = rng.permutation(len(pts))
    a = kmeans(pts, 3, np.random.default_rng(5)).partition
    b = kmeans(pts[perm], 3, np.random.default_rng(5)).partition
    unpermuted = [b.assignment[list(perm).index(i)] for i in range(len(pts))]
    assert adjusted_rand_index(a.assignment, unpermuted) == 1.0


def test_kmeans_duplicate_points_fill_all_clusters():
    pts = np.zeros((6, 2))
    result = kmeans(pts, 3, np.random.default_rng(0))
    assert result.inertia == 0.0
    assert len(result.partition.non_empty_clusters()) == 3


def test_kmeans_validation(rng):
    pts = rng.normal(size=(4, 2))
    with pytest.raises(ValueError, match="K"):
        kmeans(pts, 0, np.random.default_rng(0))
    with pytest.raises(ValueError, match="rows"):
        kmeans(pts, 5, np.random.default_rng(0))
    with pytest.raises(ValueError, match="non-finite"):
        kmeans(np.array([[np.inf, 0.0]]), 1, np.random.default_rng(0))
