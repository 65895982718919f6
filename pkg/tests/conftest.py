from __future__ import annotations

import numpy as np
import pytest

from lorapack import _kernels
from lorapack.tensors import AdapterMeta, LoraAdapter, TensorMap, lora_schema


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    # Compile the jit kernels once so timed tests measure steady state.
    _kernels.warmup()


def make_adapter(task_id="task", rank=2, d_in=3, d_out=3, layers=1, fill=None, rng=None, **meta):
    schema = lora_schema(layers, rank, d_in, d_out)
    entries = []
    for name, rows, cols in schema:
        if rng is not None:
            arr = rng.normal(size=(rows, cols)).astype(np.float32)
        else:
            arr = np.full((rows, cols), 1.0 if fill is None else fill, dtype=np.float32)
        entries.append((name, arr))
    return LoraAdapter(
        AdapterMeta(task_id=task_id, rank=rank, alpha=4.0 * rank, **meta), TensorMap(entries)
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_PREFIX = "tests/test_acceptance.py::"


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = []
    for status in ("passed", "failed", "error", "skipped"):
        for report in terminalreporter.stats.get(status, []):
            nodeid = getattr(report, "nodeid", "")
            if "test_acceptance" not in nodeid or "::" not in nodeid:
                continue
            name = nodeid.split("::")[-1]
            if not name.startswith("test_c"):
                continue
            label = "PASS" if status == "passed" else status.upper()
            lines.append((name, f"{label:<7} {name}"))
    if lines:
        terminalreporter.write_sep("-", "acceptance criteria")
        for _, line in sorted(set(lines)):
            terminalreporter.write_line(line)
