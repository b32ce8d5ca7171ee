import functools

import pytest

from mdfn import presets
from mdfn.design import SolverConfig
from mdfn.protocol import evaluate

CFG = SolverConfig()


@functools.lru_cache(maxsize=None)
def metrics_for(name: str, c_rate: float, snapshots: int = 1):
    """Cached DesignMetrics of a preset design at ``c_rate`` (result kept)."""
    return evaluate(presets.design_preset(name), c_rate, CFG, snapshot_count=snapshots, keep_result=True)


@pytest.fixture(scope="session")
def metrics():
    return metrics_for


_ACCEPTANCE = {}


@pytest.fixture
def acceptance():
    def record(n, title, ok, detail):
        _ACCEPTANCE[n] = f"criterion {n} {'PASS' if ok else 'FAIL'}: {title} [{detail}]"
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for n in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[n])
