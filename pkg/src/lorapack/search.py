"""Iterative data-driven clustering: single-adapter moves kept only on strict
loss improvement, measured on the moved adapter's own task."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import LorapackError, OracleError, SearchError
from .merge import MergeConfig, merge
from .oracle import EvalCache, LossOracle, cached
from .partition import PartitionMap, random_partition
from .tensors import AdapterSet


@dataclass(frozen=True)
class SearchConfig:
    k: int = 5
    iters: int = 200
    rng_seed: int = 0
    merge_cfg: MergeConfig = field(default_factory=MergeConfig)
    # When false, proposals that would empty their source cluster are skipped
    # instead of evaluated.
    allow_empty_source_result: bool = True

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"K must be >= 1, got {self.k}")
        if self.iters < 0:
            raise ValueError(f"iteration count must be >= 0, got {self.iters}")


@dataclass(frozen=True)
class TraceRecord:
    """One proposal: move ``task_id`` from cluster ``src`` to ``dst``.

    ``loss_src``/``loss_dst`` are None for skipped proposals (no legal
    destination, or a blocked source-emptying move); those are never
    accepted.
    """

    iteration: int
    src: int
    dst: int
    task_id: str
    loss_src: float | None
    loss_dst: float | None
    accepted: bool


@dataclass
class SearchTrace:
    k: int
    task_ids: tuple[str, ...]
    initial: tuple[int, ...]
    records: list[TraceRecord] = field(default_factory=list)
    final: tuple[int, ...] = ()

    def accepted_count(self) -> int:
        return sum(1 for r in self.records if r.accepted)

    def replay(self) -> PartitionMap:
        """Re-apply accepted moves from the initial partition."""
        index = {tid: i for i, tid in enumerate(self.task_ids)}
        assignment = list(self.initial)
        for record in self.records:
            if not record.accepted:
                continue
            i = index[record.task_id]
            if assignment[i] != record.src:
                raise LorapackError(
                    f"trace corrupt at iteration {record.iteration}: "
                    f"{record.task_id} is in cluster {assignment[i]}, not {record.src}"
                )
            assignment[i] = record.dst
        return PartitionMap(tuple(assignment), self.k)

    def write_jsonl(self, path: str | Path) -> None:
        lines = [
            json.dumps(
                {
                    "type": "init",
                    "k": self.k,
                    "task_ids": list(self.task_ids),
                    "assignment": list(self.initial),
                },
                sort_keys=True,
            )
        ]
        for r in self.records:
            lines.append(
                json.dumps(
                    {
                        "type": "move",
                        "iter": r.iteration,
                        "src": r.src,
                        "dst": r.dst,
                        "task_id": r.task_id,
                        "loss_src": r.loss_src,
                        "loss_dst": r.loss_dst,
                        "accepted": r.accepted,
                    },
                    sort_keys=True,
                )
            )
        lines.append(json.dumps({"type": "final", "assignment": list(self.final)}, sort_keys=True))
        Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")

    @classmethod
    def read_jsonl(cls, path: str | Path) -> "SearchTrace":
        records: list[TraceRecord] = []
        init = None
        final: tuple[int, ...] = ()
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            obj = json.loads(line)
            if obj["type"] == "init":
                init = obj
            elif obj["type"] == "move":
                records.append(
                    TraceRecord(
                        iteration=obj["iter"],
                        src=obj["src"],
                        dst=obj["dst"],
                        task_id=obj["task_id"],
                        loss_src=obj["loss_src"],
                        loss_dst=obj["loss_dst"],
                        accepted=obj["accepted"],
                    )
                )
            elif obj["type"] == "final":
                final = tuple(obj["assignment"])
        if init is None:
            raise LorapackError(f"trace file {path} has no init line")
        return cls(
            k=init["k"],
            task_ids=tuple(init["task_ids"]),
            initial=tuple(init["assignment"]),
            records=records,
            final=final,
        )


def d2c_run(
    adapter_set: AdapterSet,
    oracle: LossOracle,
    cfg: SearchConfig,
    initial: PartitionMap | None = None,
    cache: EvalCache | None = None,
) -> tuple[PartitionMap, SearchTrace]:
    """Run the move/accept-revert search for ``cfg.iters`` iterations.

    Per iteration: pick a non-empty source cluster, a distinct destination
    (possibly empty), and a member adapter; compare the source cluster's
    merged loss on that adapter's task against the destination's merged
    loss with the adapter added; keep the move only on strict improvement.
    All sampling comes from one generator seeded with ``cfg.rng_seed`` (the
    initial partition consumes it first unless one is supplied).
    """
    n = len(adapter_set)
    rng = np.random.default_rng(cfg.rng_seed)
    if initial is None:
        partition = random_partition(n, cfg.k, rng)
    else:
        if initial.n != n or initial.k != cfg.k:
            raise ValueError(
                f"initial partition is {initial.n} adapters / K={initial.k}, "
                f"need {n} / K={cfg.k}"
            )
        partition = initial
    ids = adapter_set.task_ids()
    oracle_cache = cached(oracle, cache if cache is not None else EvalCache(), cfg.merge_cfg.digest())

    def cluster_loss(member_indices, task_id: str) -> float:
        members = [ids[i] for i in member_indices]
        return oracle_cache.evaluate_members(
            members,
            task_id,
            lambda: merge([adapter_set[i] for i in member_indices], cfg.merge_cfg),
        )

    trace = SearchTrace(k=cfg.k, task_ids=ids, initial=partition.assignment)
    for it in range(cfg.iters):
        non_empty = partition.non_empty_clusters()
        src = non_empty[int(rng.integers(len(non_empty)))]
        if cfg.k == 1:
            members = partition.members(src)
            t = members[int(rng.integers(len(members)))]
            trace.records.append(TraceRecord(it, src, src, ids[t], None, None, False))
            continue
        draw = int(rng.integers(cfg.k - 1))
        dst = draw + 1 if draw >= src else draw
        members = partition.members(src)
        t = members[int(rng.integers(len(members)))]
        if not cfg.allow_empty_source_result and len(members) == 1:
            trace.records.append(TraceRecord(it, src, dst, ids[t], None, None, False))
            continue
        try:
            loss_src = cluster_loss(members, ids[t])
            moved = partition.move(t, dst)
            loss_dst = cluster_loss(moved.members(dst), ids[t])
        except OracleError as exc:
            raise SearchError(it, str(exc)) from exc
        accepted = loss_dst < loss_src
        if accepted:
            partition = moved
        trace.records.append(TraceRecord(it, src, dst, ids[t], loss_src, loss_dst, accepted))

    trace.final = partition.assignment
    return partition, trace


@dataclass
class PartitionEvaluation:
    """Per-task losses of a merged partition; failures keep their message."""

    per_task: dict[str, float]
    failures: dict[str, str]
    mean_loss: float | None

    @property
    def ok(self) -> bool:
        return not self.failures


def evaluate_partition(
    adapter_set: AdapterSet,
    partition: PartitionMap,
    oracle: LossOracle,
    merge_cfg: MergeConfig,
) -> PartitionEvaluation:
    """Merge every non-empty cluster once, then score each task on its cluster."""
    if partition.n != len(adapter_set):
        raise ValueError(
            f"partition covers {partition.n} adapters, set has {len(adapter_set)}"
        )
    merged = {
        c: merge([adapter_set[i] for i in partition.members(c)], merge_cfg)
        for c in partition.non_empty_clusters()
    }
    per_task: dict[str, float] = {}
    failures: dict[str, str] = {}
    for i, adapter in enumerate(adapter_set):
        cluster = partition.assignment[i]
        try:
            per_task[adapter.task_id] = oracle.evaluate(merged[cluster], adapter.task_id)
        except OracleError as exc:
            failures[adapter.task_id] = str(exc)
    mean = sum(per_task.values()) / len(per_task) if per_task else None
    return PartitionEvaluation(per_task, failures, mean)
