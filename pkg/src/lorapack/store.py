"""Bit-exact on-disk adapter format (ADPT1) and adapter-set directories.

File layout::

    magic   b"ADPT1\\n"                                   (6 bytes)
    u64le   manifest byte length (padding excluded)       (8 bytes)
    utf-8   canonical JSON manifest                       (variable)
    pad     0x20 bytes up to the next 8-byte boundary
    payload raw little-endian float32, row-major, tensors
            concatenated in manifest order

The manifest is ``json.dumps(obj, sort_keys=True, separators=(",", ":"))``
with tensors listed in lexicographic name order and ``offset`` giving each
tensor's byte position inside the payload.  Writing the same adapter twice
produces identical bytes.
"""

from __future__ import annotations

import json
import re
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import AdapterFormatError, SchemaError
from .tensors import AdapterMeta, AdapterSet, LoraAdapter, TensorMap

MAGIC = b"ADPT1\n"
INDEX_FILENAME = "index.txt"
ADAPTER_SUFFIX = ".adpt"

_HEADER_LEN = len(MAGIC) + 8


def _padding(manifest_len: int) -> int:
    return -(len(MAGIC) + 8 + manifest_len) % 8


def _manifest_bytes(adapter: LoraAdapter) -> bytes:
    tensors = []
    offset = 0
    for name, arr in adapter.weights:
        rows, cols = arr.shape
        tensors.append({"name": name, "rows": rows, "cols": cols, "offset": offset})
        offset += rows * cols * 4
    meta = adapter.meta
    obj = {
        "task_id": meta.task_id,
        "rank": meta.rank,
        "alpha": meta.alpha,
        "group_label": meta.group_label,
        "lang_label": meta.lang_label,
        "tensors": tensors,
    }
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode(
        "utf-8"
    )


def adapter_bytes(adapter: LoraAdapter) -> bytes:
    """Serialize an adapter to its canonical ADPT1 byte string."""
    manifest = _manifest_bytes(adapter)
    parts = [MAGIC, len(manifest).to_bytes(8, "little"), manifest, b" " * _padding(len(manifest))]
    for _, arr in adapter.weights:
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def write_adapter(adapter: LoraAdapter, path: str | Path) -> None:
    Path(path).write_bytes(adapter_bytes(adapter))


def _manifest_field(obj: dict, key: str, kinds, where: str):
    if key not in obj:
        raise AdapterFormatError(key, f"manifest is missing field {key!r} in {where}")
    value = obj[key]
    if not isinstance(value, kinds) or isinstance(value, bool):
        raise AdapterFormatError(key, f"manifest field {key!r} has the wrong type in {where}")
    return value


def read_adapter_bytes(data: bytes) -> LoraAdapter:
    """Parse an ADPT1 byte string, validating structure before content."""
    if len(data) < len(MAGIC) or data[: len(MAGIC)] != MAGIC:
        raise AdapterFormatError("magic", "bad magic")
    if len(data) < _HEADER_LEN:
        raise AdapterFormatError("manifest_length", "file truncated before manifest length")
    manifest_len = int.from_bytes(data[len(MAGIC) : _HEADER_LEN], "little")
    if _HEADER_LEN + manifest_len > len(data):
        raise AdapterFormatError("manifest_length", "manifest length exceeds file size")
    raw = data[_HEADER_LEN : _HEADER_LEN + manifest_len]
    try:
        obj = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise AdapterFormatError("manifest", f"manifest is not valid UTF-8 JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise AdapterFormatError("manifest", "manifest root must be a JSON object")

    task_id = _manifest_field(obj, "task_id", str, "header")
    rank = _manifest_field(obj, "rank", int, "header")
    alpha = _manifest_field(obj, "alpha", (int, float), "header")
    group_label = obj.get("group_label")
    lang_label = obj.get("lang_label")
    for key, value in (("group_label", group_label), ("lang_label", lang_label)):
        if value is not None and not isinstance(value, str):
            raise AdapterFormatError(key, f"manifest field {key!r} must be a string or null")
    table = _manifest_field(obj, "tensors", list, "header")

    payload_start = _HEADER_LEN + manifest_len + _padding(manifest_len)
    payload = data[payload_start:]

    seen: set[str] = set()
    expected_offset = 0
    entries = []
    for i, row in enumerate(table):
        if not isinstance(row, dict):
            raise AdapterFormatError("tensors", f"tensor table entry {i} must be an object")
        where = f"tensor table entry {i}"
        name = _manifest_field(row, "name", str, where)
        rows = _manifest_field(row, "rows", int, where)
        cols = _manifest_field(row, "cols", int, where)
        offset = _manifest_field(row, "offset", int, where)
        if name in seen:
            raise AdapterFormatError("name", f"duplicate tensor name {name!r}")
        seen.add(name)
        if rows < 1 or cols < 1:
            raise AdapterFormatError(
                "shape", f"tensor {name!r} declares a non-positive shape {rows}x{cols}"
            )
        if offset != expected_offset:
            raise AdapterFormatError(
                "offset",
                f"tensor {name!r} declares offset {offset}, expected {expected_offset}",
            )
        nbytes = rows * cols * 4
        if offset + nbytes > len(payload):
            raise AdapterFormatError("payload", "payload shorter than manifest declares")
        matrix = np.frombuffer(payload, dtype="<f4", count=rows * cols, offset=offset)
        entries.append((name, matrix.reshape(rows, cols)))
        expected_offset += nbytes
    if expected_offset != len(payload):
        raise AdapterFormatError("payload", "payload longer than manifest declares")

    try:
        meta = AdapterMeta(
            task_id=task_id,
            rank=rank,
            alpha=float(alpha),
            group_label=group_label,
            lang_label=lang_label,
        )
        return LoraAdapter(meta, TensorMap(entries))
    except SchemaError as exc:
        raise AdapterFormatError("manifest", f"manifest describes an invalid adapter: {exc}") from exc


def read_adapter(path: str | Path) -> LoraAdapter:
    return read_adapter_bytes(Path(path).read_bytes())


def _filename_for(task_id: str, taken: set[str]) -> str:
    stem = re.sub(r"[^A-Za-z0-9._-]", "_", task_id) or "adapter"
    name = stem + ADAPTER_SUFFIX
    k = 1
    while name in taken:
        name = f"{stem}_{k}{ADAPTER_SUFFIX}"
        k += 1
    taken.add(name)
    return name


def write_adapter_set(adapter_set: AdapterSet, directory: str | Path) -> list[str]:
    """Write one ADPT1 file per adapter plus an index listing them in catalog order."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    taken: set[str] = set()
    names = [_filename_for(a.task_id, taken) for a in adapter_set]
    for name, adapter in zip(names, adapter_set):
        write_adapter(adapter, directory / name)
    (directory / INDEX_FILENAME).write_text("".join(n + "\n" for n in names), encoding="utf-8")
    return names


def read_adapter_set(directory: str | Path) -> AdapterSet:
    directory = Path(directory)
    index = directory / INDEX_FILENAME
    if not index.is_file():
        raise AdapterFormatError("index", f"no {INDEX_FILENAME} in {directory}")
    names = [line for line in index.read_text(encoding="utf-8").splitlines() if line.strip()]
    if not names:
        raise AdapterFormatError("index", f"{INDEX_FILENAME} lists no adapters")
    return AdapterSet([read_adapter(directory / name) for name in names])


def list_adapter_files(directory: str | Path) -> list[str]:
    index = Path(directory) / INDEX_FILENAME
    if not index.is_file():
        raise AdapterFormatError("index", f"no {INDEX_FILENAME} in {directory}")
    return [line for line in index.read_text(encoding="utf-8").splitlines() if line.strip()]
