from __future__ import annotations

import json

import numpy as np
import pytest

from lorapack import AdapterFormatError, AdapterSet, read_adapter, write_adapter
from lorapack.store import (
    INDEX_FILENAME,
    MAGIC,
    adapter_bytes,
    read_adapter_bytes,
    read_adapter_set,
    write_adapter_set,
)

from .conftest import make_adapter


def assemble(manifest_obj: dict, payload: bytes) -> bytes:
    """Build a raw ADPT1 file from pieces, for malformed-file fixtures."""
    manifest = json.dumps(manifest_obj, sort_keys=True, separators=(",", ":")).encode()
    pad = -(len(MAGIC) + 8 + len(manifest)) % 8
    return MAGIC + len(manifest).to_bytes(8, "little") + manifest + b" " * pad + payload


def valid_manifest(**overrides) -> dict:
    obj = {
        "task_id": "t",
        "rank": 1,
        "alpha": 2.0,
        "group_label": None,
        "lang_label": None,
        "tensors": [
            {"name": "l.lora_A", "rows": 1, "cols": 2, "offset": 0},
            {"name": "l.lora_B", "rows": 2, "cols": 1, "offset": 8},
        ],
    }
    obj.update(overrides)
    return obj


def valid_payload() -> bytes:
    return np.arange(4, dtype="<f4").tobytes()


def test_round_trip_bit_exact(tmp_path, rng):
    a = make_adapter(task_id="round", rank=2, d_in=5, d_out=3, layers=2, rng=rng,
                     group_label="g0", lang_label="en")
    path = tmp_path / "a.adpt"
    write_adapter(a, path)
    b = read_adapter(path)
    assert b == a
    assert b.meta == a.meta
    assert adapter_bytes(b) == path.read_bytes()


def test_writing_twice_is_canonical(tmp_path, rng):
    a = make_adapter(rng=rng)
    p1, p2 = tmp_path / "1.adpt", tmp_path / "2.adpt"
    write_adapter(a, p1)
    write_adapter(a, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_bad_magic():
    with pytest.raises(AdapterFormatError, match="bad magic") as err:
        read_adapter_bytes(b"XXXX" + adapter_bytes(make_adapter())[4:])
    assert err.value.field == "magic"


def test_truncated_before_manifest_length():
    with pytest.raises(AdapterFormatError, match="truncated"):
        read_adapter_bytes(MAGIC + b"\x01")


def test_manifest_length_beyond_file():
    data = assemble(valid_manifest(), valid_payload())
    tampered = data[: len(MAGIC)] + (10**6).to_bytes(8, "little") + data[len(MAGIC) + 8 :]
    with pytest.raises(AdapterFormatError, match="manifest length exceeds") as err:
        read_adapter_bytes(tampered)
    assert err.value.field == "manifest_length"


def test_truncated_payload():
    data = assemble(valid_manifest(), valid_payload()[:-4])
    with pytest.raises(AdapterFormatError, match="payload shorter than manifest declares"):
        read_adapter_bytes(data)


def test_payload_longer_than_declared():
    data = assemble(valid_manifest(), valid_payload() + b"\x00\x00\x00\x00")
    with pytest.raises(AdapterFormatError, match="payload longer than manifest declares"):
        read_adapter_bytes(data)


def test_duplicate_tensor_names():
    manifest = valid_manifest(
        tensors=[
            {"name": "l.lora_A", "rows": 1, "cols": 2, "offset": 0},
            {"name": "l.lora_A", "rows": 1, "cols": 2, "offset": 8},
        ]
    )
    with pytest.raises(AdapterFormatError, match="duplicate tensor name") as err:
        read_adapter_bytes(assemble(manifest, valid_payload()))
    assert err.value.field == "name"


def test_offset_mismatch():
    manifest = valid_manifest(
        tensors=[
            {"name": "l.lora_A", "rows": 1, "cols": 2, "offset": 0},
            {"name": "l.lora_B", "rows": 2, "cols": 1, "offset": 4},
        ]
    )
    with pytest.raises(AdapterFormatError, match="expected 8") as err:
        read_adapter_bytes(assemble(manifest, valid_payload()))
    assert err.value.field == "offset"


def test_non_positive_shape_rejected():
    manifest = valid_manifest(
        tensors=[{"name": "l.lora_A", "rows": 0, "cols": 2, "offset": 0}]
    )
    with pytest.raises(AdapterFormatError, match="non-positive shape"):
        read_adapter_bytes(assemble(manifest, b""))


def test_manifest_not_json():
    manifest = b"{not json"
    pad = -(len(MAGIC) + 8 + len(manifest)) % 8
    data = MAGIC + len(manifest).to_bytes(8, "little") + manifest + b" " * pad
    with pytest.raises(AdapterFormatError, match="not valid UTF-8 JSON"):
        read_adapter_bytes(data)


def test_missing_manifest_field():
    manifest = valid_manifest()
    del manifest["rank"]
    with pytest.raises(AdapterFormatError, match="missing field 'rank'"):
        read_adapter_bytes(assemble(manifest, valid_payload()))


def test_adapter_set_directory_round_trip(tmp_path, rng):
    adapters = [make_adapter(task_id=f"task{i}", rng=rng, group_label="g") for i in range(5)]
    original = AdapterSet(adapters)
    names = write_adapter_set(original, tmp_path)
    assert (tmp_path / INDEX_FILENAME).read_text().splitlines() == names
    loaded = read_adapter_set(tmp_path)
    assert loaded.task_ids() == original.task_ids()
    for a, b in zip(original, loaded):
        assert a == b


def test_adapter_set_missing_index(tmp_path):
    with pytest.raises(AdapterFormatError, match=INDEX_FILENAME):
        read_adapter_set(tmp_path)


def test_filename_collisions_resolved(tmp_path):
    adapters = [make_adapter(task_id="a/b"), make_adapter(task_id="a_b", fill=2.0)]
    names = write_adapter_set(AdapterSet(adapters), tmp_path)
    assert len(set(names)) == 2
    loaded = read_adapter_set(tmp_path)
    assert loaded.task_ids() == ("a/b", "a_b")
