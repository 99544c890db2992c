import os
import sys

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: acceptance gate criteria")


@pytest.fixture(autouse=True)
def _no_env_seed(monkeypatch):
    monkeypatch.delenv("FRL_SEED", raising=False)


_GATE_LINES = []


@pytest.fixture
def gate():
    """Record one acceptance line: gate(n, ok, detail)."""

    def record(n, ok, detail=""):
        _GATE_LINES.append((n, f"ACCEPTANCE {n}: {'PASS' if ok else 'FAIL'}  {detail}".rstrip()))
        print(_GATE_LINES[-1][1])
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _GATE_LINES:
        terminalreporter.section("acceptance gate")
        for _, line in sorted(_GATE_LINES):
            terminalreporter.write_line(line)
