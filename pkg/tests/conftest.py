import time

import pytest

from helpers import HASH_CFG, planted_fixture


@pytest.fixture
def hash_cfg():
    return HASH_CFG


@pytest.fixture(scope="session")
def planted():
    return planted_fixture()


SUITE_BUDGET_S = 60.0


def pytest_sessionstart(session):
    session.config._spike_start = time.perf_counter()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    start = getattr(config, "_spike_start", None)
    if start is None:
        return
    elapsed = time.perf_counter() - start
    verdict = "PASS" if elapsed < SUITE_BUDGET_S else "FAIL"
    terminalreporter.write_line(f"{verdict}  full-suite runtime: {elapsed:.1f}s (budget {SUITE_BUDGET_S:.0f}s)")
