"""Partition maps over an adapter catalog, their samplers, and storage math."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import LorapackError
from .tensors import AdapterSet


@dataclass(frozen=True)
class PartitionMap:
    """Assignment of each of N adapters to one of K clusters."""

    assignment: tuple[int, ...]
    k: int

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"K must be >= 1, got {self.k}")
        if not self.assignment:
            raise ValueError("empty assignment")
        for idx, c in enumerate(self.assignment):
            if not (0 <= c < self.k):
                raise ValueError(f"adapter {idx} assigned to cluster {c}, K={self.k}")

    @property
    def n(self) -> int:
        return len(self.assignment)

    def members(self, cluster: int) -> tuple[int, ...]:
        """Original adapter indices assigned to ``cluster``, ascending."""
        if not (0 <= cluster < self.k):
            raise ValueError(f"cluster {cluster} out of range for K={self.k}")
        return tuple(i for i, c in enumerate(self.assignment) if c == cluster)

    def counts(self) -> tuple[int, ...]:
        out = [0] * self.k
        for c in self.assignment:
            out[c] += 1
        return tuple(out)

    def non_empty_clusters(self) -> tuple[int, ...]:
        return tuple(c for c, count in enumerate(self.counts()) if count > 0)

    def move(self, adapter_index: int, cluster: int) -> "PartitionMap":
        """New map with one adapter reassigned."""
        if not (0 <= cluster < self.k):
            raise ValueError(f"cluster {cluster} out of range for K={self.k}")
        assignment = list(self.assignment)
        assignment[adapter_index] = cluster
        return PartitionMap(tuple(assignment), self.k)


def random_partition(n: int, k: int, rng: np.random.Generator) -> PartitionMap:
    """Uniform assignment with a repair pass that leaves no cluster empty.

    Repair moves the highest-index member of a largest cluster into each
    empty cluster (ascending), keeping the result a deterministic function
    of the rng state.
    """
    if k < 1:
        raise ValueError(f"K must be >= 1, got {k}")
    if k > n:
        raise ValueError(f"K={k} exceeds adapter count N={n}")
    assignment = rng.integers(0, k, size=n).tolist()
    counts = [0] * k
    for c in assignment:
        counts[c] += 1
    for empty in range(k):
        if counts[empty] > 0:
            continue
        donor = max(range(k), key=lambda c: (counts[c], -c))
        victim = max(i for i, c in enumerate(assignment) if c == donor)
        assignment[victim] = empty
        counts[donor] -= 1
        counts[empty] += 1
    return PartitionMap(tuple(assignment), k)


def dirichlet_partition(
    adapters: AdapterSet,
    k: int,
    attribute: str,
    alpha: float,
    rng: np.random.Generator,
) -> PartitionMap:
    """Per-attribute Dirichlet draw over clusters, then categorical assignment.

    Small ``alpha`` concentrates each attribute value in few clusters
    (homogeneous partitions); large ``alpha`` approaches uniform assignment.
    Each attribute value gets a distinct anchor cluster and its drawn
    proportions are placed with the largest share on that anchor, so the
    ``alpha -> 0`` limit yields label-pure clusters whenever #labels <= K
    instead of collapsing several labels into one cluster by chance.  The
    placement bias vanishes as ``alpha`` grows (the shares flatten out).
    """
    if attribute not in ("group_label", "lang_label"):
        raise ValueError(f"attribute must be 'group_label' or 'lang_label', got {attribute!r}")
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    if k < 1:
        raise ValueError(f"K must be >= 1, got {k}")
    values = []
    for a in adapters:
        value = getattr(a.meta, attribute)
        if value is None:
            raise LorapackError(f"adapter {a.task_id!r} has no {attribute}")
        values.append(value)
    anchors = rng.permutation(k)
    proportions = {}
    for i, g in enumerate(sorted(set(values))):
        draw = np.sort(rng.dirichlet(np.full(k, alpha)))[::-1]
        anchor = anchors[i % k]
        others = np.delete(np.arange(k), anchor)
        placed = np.empty(k)
        placed[anchor] = draw[0]
        placed[others[rng.permutation(k - 1)]] = draw[1:]
        proportions[g] = placed
    assignment = tuple(int(rng.choice(k, p=proportions[g])) for g in values)
    return PartitionMap(assignment, k)


def storage_fraction(k_used: int, n: int, per_adapter_bytes: int | None = None) -> float:
    """Storage for ``k_used`` merged adapters as a percentage of keeping all N.

    Adapters are assumed equally sized; ``per_adapter_bytes`` is accepted for
    callers that also want absolute numbers and does not change the ratio.
    """
    if not (1 <= k_used <= n):
        raise ValueError(f"need 1 <= K_used <= N, got K_used={k_used}, N={n}")
    return 100.0 * k_used / n


def write_partition_manifest(
    path: str | Path,
    partition: PartitionMap,
    task_ids: Sequence[str],
    method: str,
    seed: int,
) -> None:
    """Text manifest: header lines, then one ``task_id<TAB>cluster`` line per adapter."""
    if len(task_ids) != partition.n:
        raise ValueError(f"{len(task_ids)} task ids for {partition.n} assignments")
    lines = [
        f"# K={partition.k}",
        f"# N={partition.n}",
        f"# seed={seed}",
        f"# method={method}",
    ]
    lines += [f"{tid}\t{c}" for tid, c in zip(task_ids, partition.assignment)]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def read_partition_manifest(path: str | Path) -> tuple[PartitionMap, list[str], dict[str, str]]:
    """Read back a manifest; returns (partition, task_ids, header fields)."""
    header: dict[str, str] = {}
    task_ids: list[str] = []
    assignment: list[int] = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            header[key.strip()] = value.strip()
            continue
        tid, _, cluster = line.partition("\t")
        if not cluster:
            raise LorapackError(f"malformed partition line {line!r}")
        task_ids.append(tid)
        assignment.append(int(cluster))
    if "K" not in header:
        raise LorapackError("partition manifest is missing its K header")
    return PartitionMap(tuple(assignment), int(header["K"])), task_ids, header
