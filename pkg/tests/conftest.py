import numpy as np
import pytest

from dirichlet_lab.core import TimeGrid


@pytest.fixture
def grid():
    return TimeGrid(1.0, 1000)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
