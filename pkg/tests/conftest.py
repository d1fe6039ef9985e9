import os

import numpy as np
import pytest

from mclnn import kernels

REPO = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
CONFIGS = os.path.join(REPO, "configs")
SYNTHETIC = os.path.join(REPO, "data", "synthetic")


@pytest.fixture(params=sorted(kernels.AVAILABLE))
def backend(request, monkeypatch):
    """Run the test once per available kernel backend."""
    monkeypatch.setattr(kernels, "_impl", kernels.get(request.param))
    return request.param


@pytest.fixture
def nprng():
    return np.random.default_rng(12345)


# acceptance results, filled by tests/test_acceptance.py: number -> (title, passed, seconds, note)
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        title, passed, seconds, note = ACCEPTANCE[num]
        verdict = "PASS" if passed else "FAIL"
        line = f"[{verdict}] {num}. {title} ({seconds:.1f}s)"
        terminalreporter.write_line(line + (f": {note}" if note else ""))
