"""Loss oracles: the evaluation contract the clustering search optimizes.

An oracle maps (merged adapter, task id) to a finite lower-is-better loss
and must be deterministic.  Three implementations live here: a synthetic
in-process model for desk-scale verification, a subprocess client for real
evaluators, and a memoizing wrapper keyed by cluster composition.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
import shlex
import subprocess
import tempfile
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Protocol, Sequence

import numpy as np

from . import _kernels
from .errors import OracleError
from .store import write_adapter
from .tensors import (
    AdapterMeta,
    AdapterSet,
    LoraAdapter,
    Schema,
    TensorMap,
    flatten,
    schema_dim,
)

LOSS_LINE_RE = re.compile(r"^-?[0-9]+(\.[0-9]+)?([eE][+-]?[0-9]+)?$")


class LossOracle(Protocol):
    def evaluate(self, merged: LoraAdapter, task_id: str) -> float: ...


@dataclass
class SyntheticTaskModel:
    """Planted-target model: each task's ideal weights are its group's center.

    ``sigma`` is the weight-noise scale used at generation time and also
    sets the scale ``sigma**2 / n`` of the deterministic pseudo-noise that
    emulates evaluating on ``n`` examples.
    """

    schema: Schema
    sigma: float
    center_scale: float
    examples_per_task: int
    centers: dict[str, np.ndarray]
    task_groups: dict[str, str]

    @property
    def dim(self) -> int:
        return schema_dim(self.schema)

    def target(self, task_id: str) -> np.ndarray:
        if task_id not in self.task_groups:
            raise OracleError(f"unknown task_id {task_id!r}")
        return self.centers[self.task_groups[task_id]]

    def save(self, path: str | Path) -> None:
        obj = {
            "version": 1,
            "schema": [[name, rows, cols] for name, rows, cols in self.schema],
            "sigma": self.sigma,
            "center_scale": self.center_scale,
            "examples_per_task": self.examples_per_task,
            "centers": {g: c.tolist() for g, c in sorted(self.centers.items())},
            "task_groups": dict(sorted(self.task_groups.items())),
        }
        text = json.dumps(obj, sort_keys=True, separators=(",", ":"))
        Path(path).write_text(text, encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "SyntheticTaskModel":
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
        schema = tuple((str(n), int(r), int(c)) for n, r, c in obj["schema"])
        centers = {
            g: np.asarray(values, dtype=np.float64) for g, values in obj["centers"].items()
        }
        return cls(
            schema=schema,
            sigma=float(obj["sigma"]),
            center_scale=float(obj["center_scale"]),
            examples_per_task=int(obj["examples_per_task"]),
            centers=centers,
            task_groups={str(k): str(v) for k, v in obj["task_groups"].items()},
        )


def synthetic_generate(
    groups: int,
    n_adapters: int,
    schema: Schema,
    center_scale: float,
    noise: float,
    rng: np.random.Generator,
    examples_per_task: int = 10,
    langs: int = 8,
    alpha: float | None = None,
) -> tuple[AdapterSet, SyntheticTaskModel]:
    """Plant group centers and sample one noisy adapter per task around them.

    Group sizes are as equal as possible; adapters carry ``group_label`` and
    a cyclic ``lang_label``.  Centers are rounded to float32 up front so a
    zero-noise adapter is bit-identical to its center.
    """
    if groups < 1 or n_adapters < groups:
        raise ValueError(f"need 1 <= groups <= n_adapters, got {groups}, {n_adapters}")
    if not center_scale > 0:
        raise ValueError(f"center_scale must be positive, got {center_scale}")
    if noise < 0:
        raise ValueError(f"noise must be non-negative, got {noise}")
    if examples_per_task < 1:
        raise ValueError(f"examples_per_task must be >= 1, got {examples_per_task}")
    dim = schema_dim(schema)
    if dim == 0:
        raise ValueError("schema dimension is 0")
    ranks = [rows for name, rows, _ in schema if name.endswith(".lora_A")]
    if not ranks:
        raise ValueError("schema has no .lora_A tensors")
    rank = ranks[0]
    if alpha is None:
        alpha = 4.0 * rank

    centers = {
        f"group{g}": rng.normal(0.0, center_scale, dim).astype(np.float32).astype(np.float64)
        for g in range(groups)
    }
    adapters = []
    task_groups: dict[str, str] = {}
    for t in range(n_adapters):
        group = f"group{t * groups // n_adapters}"
        task_id = f"task{t:03d}"
        task_groups[task_id] = group
        flat = centers[group] + rng.normal(0.0, noise, dim) if noise > 0 else centers[group]
        meta = AdapterMeta(
            task_id=task_id,
            rank=rank,
            alpha=alpha,
            group_label=group,
            lang_label=f"lang{t % langs}" if langs > 0 else None,
        )
        adapters.append(_adapter_from_flat(flat.astype(np.float32), schema, meta))
    model = SyntheticTaskModel(
        schema=schema,
        sigma=noise,
        center_scale=center_scale,
        examples_per_task=examples_per_task,
        centers=centers,
        task_groups=task_groups,
    )
    return AdapterSet(adapters), model


def _adapter_from_flat(flat: np.ndarray, schema: Schema, meta: AdapterMeta) -> LoraAdapter:
    entries = []
    offset = 0
    for name, rows, cols in schema:
        n = rows * cols
        entries.append((name, flat[offset : offset + n].reshape(rows, cols)))
        offset += n
    return LoraAdapter(meta, TensorMap(entries))


def _pseudo_noise_unit(flat: np.ndarray, task_id: str) -> float:
    """Deterministic value in [0, 1) derived from weights and task identity."""
    h = hashlib.blake2b(digest_size=8)
    h.update(flat.tobytes())
    h.update(b"|")
    h.update(task_id.encode("utf-8"))
    return int.from_bytes(h.digest(), "big") / 2.0**64


class SyntheticOracle:
    """Mean squared distance to the task's planted target, plus pseudo-noise.

    The noise term is ``u * sigma**2 / n`` with ``u`` in [0, 1) hashed from
    (weights, task), standing in for the sampling error of an n-example
    evaluation set while keeping every call reproducible.
    """

    def __init__(self, model: SyntheticTaskModel, examples_per_task: int | None = None):
        n = model.examples_per_task if examples_per_task is None else examples_per_task
        if n < 1:
            raise ValueError(f"examples_per_task must be >= 1, got {n}")
        self.model = model
        self.examples_per_task = n

    def evaluate(self, merged: LoraAdapter, task_id: str) -> float:
        target = self.model.target(task_id)
        flat = flatten(merged)
        if flat.size != target.size:
            raise OracleError(
                f"adapter dimension {flat.size} does not match the model's {target.size}"
            )
        dist = _kernels.sq_euclidean(flat.astype(np.float64), target)
        eps = _pseudo_noise_unit(flat, task_id) * self.model.sigma**2 / self.examples_per_task
        return dist / flat.size + eps


class CommandOracle:
    """Runs an external evaluator per call, speaking the subprocess protocol.

    The merged adapter is written to a temp file and the command invoked as
    ``<command> --adapter <path> --task <task_id> --examples <n>``.  The
    first stdout line must be a decimal loss; anything else is an error.
    """

    def __init__(
        self,
        command: Sequence[str] | str,
        examples_per_task: int = 10,
        timeout: float = 600.0,
    ):
        self.command = shlex.split(command) if isinstance(command, str) else list(command)
        if not self.command:
            raise ValueError("oracle command is empty")
        self.examples_per_task = examples_per_task
        self.timeout = timeout
        self._lock = threading.Lock()

    def evaluate(self, merged: LoraAdapter, task_id: str) -> float:
        with tempfile.TemporaryDirectory(prefix="lorapack-oracle-") as tmp:
            path = Path(tmp) / "merged.adpt"
            write_adapter(merged, path)
            argv = self.command + [
                "--adapter",
                str(path),
                "--task",
                task_id,
                "--examples",
                str(self.examples_per_task),
            ]
            with self._lock:
                try:
                    proc = subprocess.run(
                        argv, capture_output=True, text=True, timeout=self.timeout
                    )
                except FileNotFoundError as exc:
                    raise OracleError(f"oracle command not found: {self.command[0]!r}") from exc
                except subprocess.TimeoutExpired as exc:
                    raise OracleError(
                        f"oracle command timed out after {self.timeout:g}s"
                    ) from exc
        if proc.returncode != 0:
            detail = proc.stderr.strip().splitlines()
            suffix = f": {detail[-1]}" if detail else ""
            raise OracleError(f"oracle command failed (exit {proc.returncode}){suffix}")
        first = proc.stdout.split("\n", 1)[0].strip()
        if not LOSS_LINE_RE.match(first):
            raise OracleError(f"oracle output is not a decimal loss: {first!r}")
        value = float(first)
        if not math.isfinite(value):
            raise OracleError(f"oracle returned a non-finite loss: {first!r}")
        return value


class EvalCache:
    """Thread-safe exact-value memo of oracle results."""

    _MISSING = object()

    def __init__(self):
        self._data: dict = {}
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def __len__(self) -> int:
        return len(self._data)

    def lookup(self, key):
        with self._lock:
            value = self._data.get(key, self._MISSING)
            if value is self._MISSING:
                self.misses += 1
                return self._MISSING
            self.hits += 1
            return value

    def store(self, key, value: float) -> None:
        with self._lock:
            self._data[key] = value


class CachedOracle:
    """Oracle wrapper that memoizes by cluster composition.

    The oracle itself only sees merged weights, so callers supply the member
    task ids that produced them; the key is (merge digest, sorted members,
    task).  ``merged_factory`` is only invoked on a miss, which also skips
    the merge work on repeat proposals.
    """

    def __init__(self, inner: LossOracle, cache: EvalCache, merge_digest: str = ""):
        self.inner = inner
        self.cache = cache
        self.merge_digest = merge_digest

    def evaluate(self, merged: LoraAdapter, task_id: str) -> float:
        return self.inner.evaluate(merged, task_id)

    def evaluate_members(
        self,
        member_task_ids: Sequence[str],
        task_id: str,
        merged_factory: Callable[[], LoraAdapter],
    ) -> float:
        key = (self.merge_digest, tuple(sorted(member_task_ids)), task_id)
        value = self.cache.lookup(key)
        if value is not EvalCache._MISSING:
            return value
        result = self.inner.evaluate(merged_factory(), task_id)
        self.cache.store(key, result)
        return result


def cached(oracle: LossOracle, cache: EvalCache, merge_digest: str = "") -> CachedOracle:
    """Wrap an oracle with composition-keyed memoization."""
    return CachedOracle(oracle, cache, merge_digest)
