import numpy as np
import pytest

from mixneedlets.needlet import bank_for, build_filter


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def filt():
    return build_filter(2.0)


@pytest.fixture(scope="session")
def bank16():
    return bank_for(16, 2)


@pytest.fixture(scope="session")
def bank32():
    return bank_for(32, 2)


@pytest.fixture(scope="session")
def bank64():
    return bank_for(64, 2)


def pytest_configure(config):
    config.acceptance_lines = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
