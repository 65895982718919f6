"""Partition-quality metrics: adjusted rand index and label purity."""

from __future__ import annotations

from collections import Counter
from typing import Hashable, Sequence


def _comb2(x: int) -> int:
    return x * (x - 1) // 2


def adjusted_rand_index(labels_a: Sequence[Hashable], labels_b: Sequence[Hashable]) -> float:
    """Chance-corrected agreement between two labelings of the same items.

    1.0 means identical up to relabeling, ~0 means chance-level agreement.
    """
    if len(labels_a) != len(labels_b):
        raise ValueError(f"label lists differ in length: {len(labels_a)} vs {len(labels_b)}")
    n = len(labels_a)
    if n == 0:
        raise ValueError("empty labelings")
    contingency = Counter(zip(labels_a, labels_b))
    a_sizes = Counter(labels_a)
    b_sizes = Counter(labels_b)

    sum_cells = sum(_comb2(c) for c in contingency.values())
    sum_a = sum(_comb2(c) for c in a_sizes.values())
    sum_b = sum(_comb2(c) for c in b_sizes.values())
    total = _comb2(n)

    expected = sum_a * sum_b / total if total else 0.0
    max_index = (sum_a + sum_b) / 2.0
    if max_index == expected:
        # Both labelings are a single class (or all singletons): identical by
        # construction, and the usual convention is 1.0.
        return 1.0
    return (sum_cells - expected) / (max_index - expected)


def purity(cluster_labels: Sequence[Hashable], true_labels: Sequence[Hashable]) -> float:
    """Fraction of items whose cluster's majority true-label matches their own."""
    if len(cluster_labels) != len(true_labels):
        raise ValueError(
            f"label lists differ in length: {len(cluster_labels)} vs {len(true_labels)}"
        )
    if not cluster_labels:
        raise ValueError("empty labelings")
    per_cluster: dict[Hashable, Counter] = {}
    for c, t in zip(cluster_labels, true_labels):
        per_cluster.setdefault(c, Counter())[t] += 1
    majority = sum(counter.most_common(1)[0][1] for counter in per_cluster.values())
    return majority / len(cluster_labels)
