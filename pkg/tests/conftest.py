from __future__ import annotations

import pytest
from hypothesis import settings

from mfg_lqg.model import two_regime_example
from mfg_lqg.riccati import solve_mfg_riccati

settings.register_profile("repro", derandomize=True)
settings.load_profile("repro")

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def base_spec():
    return two_regime_example()


@pytest.fixture(scope="session")
def base_ric(base_spec):
    return solve_mfg_riccati(base_spec)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
