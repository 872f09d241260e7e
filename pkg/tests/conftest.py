import numpy as np
import pytest

from patchmine.checks import random_instance

ACCEPTANCE_LINES = []


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)


@pytest.fixture()
def instance(rng):
    """Random mining instance factory: ``instance(n, m, c, dtype=..., seed=...)``."""
    def make(n, m, c, dtype=np.float64, seed=0):
        return random_instance(rng, n, m, c, dtype, seed)
    return make


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
