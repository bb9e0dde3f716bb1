from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def random_scene(rng, h=32, w=32, max_classes=8, max_masks=5):
    """Random logits plus a set of random (possibly overlapping) masks."""
    c = int(rng.integers(2, max_classes + 1))
    logits = rng.normal(0.0, 2.0, size=(c, h, w)).astype(np.float32)
    masks = []
    for _ in range(int(rng.integers(1, max_masks + 1))):
        y0, x0 = rng.integers(0, h), rng.integers(0, w)
        y1, x1 = rng.integers(y0 + 1, h + 1), rng.integers(x0 + 1, w + 1)
        m = np.zeros((h, w), dtype=bool)
        m[y0:y1, x0:x1] = True
        if rng.random() < 0.5:
            m &= rng.random((h, w)) < 0.8
            if not m.any():
                m[y0, x0] = True
        masks.append(m)
    return logits, np.stack(masks)


# --- one summary line per acceptance criterion -------------------------------

_ACCEPTANCE: dict[str, str] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::" not in report.nodeid:
        return
    if report.when == "call" or report.outcome != "passed":
        if _ACCEPTANCE.get(report.nodeid) != "failed":
            _ACCEPTANCE[report.nodeid] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for nodeid, outcome in _ACCEPTANCE.items():
        verdict = {"passed": "PASS", "failed": "FAIL"}.get(outcome, outcome.upper())
        terminalreporter.write_line(f"{verdict}  {nodeid.split('::')[-1]}")
