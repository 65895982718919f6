"""In-memory adapter representation: named f32 matrices, metadata, flattening.

All types are immutable after construction (arrays are made read-only), so
they can be shared freely across threads.  Tensor iteration order is always
lexicographic by name; every flattening convention in the package depends on
that single ordering.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from .errors import SchemaError

# (name, rows, cols) triples in lexicographic name order.
Schema = tuple[tuple[str, int, int], ...]

LORA_A_SUFFIX = ".lora_A"
LORA_B_SUFFIX = ".lora_B"


def _freeze_matrix(name: str, value) -> np.ndarray:
    arr = np.array(value, dtype=np.float32, order="C")
    if arr.ndim != 2:
        raise SchemaError(f"tensor {name!r} must be 2-D, got shape {arr.shape}")
    rows, cols = arr.shape
    if rows < 1 or cols < 1:
        raise SchemaError(f"tensor {name!r} must have rows >= 1 and cols >= 1, got {arr.shape}")
    arr.setflags(write=False)
    return arr


class TensorMap:
    """Ordered map of tensor name -> float32 matrix, sorted by name."""

    __slots__ = ("_entries",)

    def __init__(self, entries: Mapping[str, np.ndarray] | Iterable[tuple[str, np.ndarray]]):
        items = entries.items() if isinstance(entries, Mapping) else list(entries)
        seen: dict[str, np.ndarray] = {}
        for name, value in items:
            if not isinstance(name, str) or not name:
                raise SchemaError(f"tensor name must be a non-empty string, got {name!r}")
            if name in seen:
                raise SchemaError(f"duplicate tensor name {name!r}")
            seen[name] = _freeze_matrix(name, value)
        if not seen:
            raise SchemaError("a TensorMap needs at least one tensor")
        self._entries = tuple(sorted(seen.items()))

    def __iter__(self) -> Iterator[tuple[str, np.ndarray]]:
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, name: str) -> bool:
        return any(n == name for n, _ in self._entries)

    def __getitem__(self, name: str) -> np.ndarray:
        for n, arr in self._entries:
            if n == name:
                return arr
        raise KeyError(name)

    def names(self) -> tuple[str, ...]:
        return tuple(n for n, _ in self._entries)

    def schema(self) -> Schema:
        return tuple((n, a.shape[0], a.shape[1]) for n, a in self._entries)

    @property
    def total_size(self) -> int:
        """Total number of scalar parameters."""
        return sum(a.size for _, a in self._entries)

    def __eq__(self, other) -> bool:
        if not isinstance(other, TensorMap):
            return NotImplemented
        if self.schema() != other.schema():
            return False
        return all(
            np.array_equal(a, b, equal_nan=True)
            for (_, a), (_, b) in zip(self._entries, other._entries)
        )

    def __repr__(self) -> str:
        inner = ", ".join(f"{n}:{a.shape[0]}x{a.shape[1]}" for n, a in self._entries)
        return f"TensorMap({inner})"


@dataclass(frozen=True)
class AdapterMeta:
    """Identity and LoRA hyperparameters of one adapter."""

    task_id: str
    rank: int
    alpha: float
    group_label: str | None = None
    lang_label: str | None = None

    def __post_init__(self):
        if not self.task_id:
            raise SchemaError("task_id must be non-empty")
        if self.rank < 1:
            raise SchemaError(f"rank must be positive, got {self.rank}")
        if not self.alpha > 0:
            raise SchemaError(f"alpha must be positive, got {self.alpha}")


class LoraAdapter:
    """One task's LoRA weights: paired ``<layer>.lora_A`` / ``<layer>.lora_B`` matrices."""

    __slots__ = ("meta", "weights")

    def __init__(self, meta: AdapterMeta, weights: TensorMap):
        self.meta = meta
        self.weights = weights
        self._validate()

    def _validate(self):
        layers: dict[str, dict[str, tuple[int, int]]] = {}
        for name, arr in self.weights:
            if name.endswith(LORA_A_SUFFIX):
                layer, side = name[: -len(LORA_A_SUFFIX)], "A"
            elif name.endswith(LORA_B_SUFFIX):
                layer, side = name[: -len(LORA_B_SUFFIX)], "B"
            else:
                raise SchemaError(
                    f"tensor {name!r} is neither a {LORA_A_SUFFIX} nor a {LORA_B_SUFFIX} matrix"
                )
            if not layer:
                raise SchemaError(f"tensor {name!r} has an empty layer name")
            layers.setdefault(layer, {})[side] = arr.shape
        rank = self.meta.rank
        for layer, sides in layers.items():
            if "A" not in sides or "B" not in sides:
                missing = "A" if "A" not in sides else "B"
                raise SchemaError(f"layer {layer!r} is missing its lora_{missing} matrix")
            if sides["A"][0] != rank:
                raise SchemaError(
                    f"layer {layer!r}: lora_A has {sides['A'][0]} rows, expected rank {rank}"
                )
            if sides["B"][1] != rank:
                raise SchemaError(
                    f"layer {layer!r}: lora_B has {sides['B'][1]} cols, expected rank {rank}"
                )

    @property
    def task_id(self) -> str:
        return self.meta.task_id

    def schema(self) -> Schema:
        return self.weights.schema()

    def layer_names(self) -> tuple[str, ...]:
        """Distinct layer prefixes in lexicographic order."""
        names = {
            n[: -len(LORA_A_SUFFIX)] for n, _ in self.weights if n.endswith(LORA_A_SUFFIX)
        }
        return tuple(sorted(names))

    def __eq__(self, other) -> bool:
        if not isinstance(other, LoraAdapter):
            return NotImplemented
        return self.meta == other.meta and self.weights == other.weights

    def __repr__(self) -> str:
        return f"LoraAdapter(task_id={self.meta.task_id!r}, tensors={len(self.weights)})"


class AdapterSet:
    """N adapters sharing one tensor schema, with pairwise-distinct task ids."""

    __slots__ = ("_adapters",)

    def __init__(self, adapters: Sequence[LoraAdapter]):
        adapters = tuple(adapters)
        if not adapters:
            raise SchemaError("an AdapterSet needs at least one adapter")
        schema = adapters[0].schema()
        ids = set()
        for a in adapters:
            if a.schema() != schema:
                raise SchemaError(
                    f"adapter {a.task_id!r} does not share the set's tensor schema"
                )
            if a.task_id in ids:
                raise SchemaError(f"duplicate task_id {a.task_id!r}")
            ids.add(a.task_id)
        self._adapters = adapters

    def __len__(self) -> int:
        return len(self._adapters)

    def __iter__(self) -> Iterator[LoraAdapter]:
        return iter(self._adapters)

    def __getitem__(self, index: int) -> LoraAdapter:
        return self._adapters[index]

    @property
    def adapters(self) -> tuple[LoraAdapter, ...]:
        return self._adapters

    def schema(self) -> Schema:
        return self._adapters[0].schema()

    def task_ids(self) -> tuple[str, ...]:
        return tuple(a.task_id for a in self._adapters)

    def index_of(self, task_id: str) -> int:
        for i, a in enumerate(self._adapters):
            if a.task_id == task_id:
                return i
        raise KeyError(task_id)


def schema_dim(schema: Schema) -> int:
    return sum(r * c for _, r, c in schema)


def flatten(adapter: LoraAdapter) -> np.ndarray:
    """Concatenate all tensors row-major, in lexicographic name order.

    Returns a fresh float32 vector of length ``schema_dim(adapter.schema())``.
    """
    return np.concatenate([arr.ravel() for _, arr in adapter.weights])


def unflatten(vector: np.ndarray, schema: Schema, meta: AdapterMeta) -> LoraAdapter:
    """Inverse of :func:`flatten` for a given schema."""
    vec = np.asarray(vector, dtype=np.float32).ravel()
    dim = schema_dim(schema)
    if vec.size != dim:
        raise SchemaError(f"vector has {vec.size} entries, schema needs {dim}")
    entries = []
    offset = 0
    for name, rows, cols in schema:
        n = rows * cols
        entries.append((name, vec[offset : offset + n].reshape(rows, cols)))
        offset += n
    return LoraAdapter(meta, TensorMap(entries))


def lora_schema(layers: int, rank: int, d_in: int, d_out: int) -> Schema:
    """Standard schema: ``layer<i>.lora_A`` (rank x d_in), ``layer<i>.lora_B`` (d_out x rank)."""
    if layers < 1 or rank < 1 or d_in < 1 or d_out < 1:
        raise ValueError("layers, rank, d_in and d_out must all be >= 1")
    entries = []
    for i in range(layers):
        entries.append((f"layer{i}.lora_A", rank, d_in))
        entries.append((f"layer{i}.lora_B", d_out, rank))
    return tuple(sorted(entries))


def check_same_schema(adapters: Sequence[LoraAdapter]) -> Schema:
    """Raise :class:`SchemaError` unless all adapters share names and shapes."""
    schema = adapters[0].schema()
    for a in adapters[1:]:
        if a.schema() != schema:
            raise SchemaError(f"adapter {a.task_id!r} has a mismatching tensor schema")
    return schema
