import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from regperc.graph import RegularGraph, complete_graph

settings.register_profile(
    "default", deadline=None, max_examples=50,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")

# criterion lines collected by the acceptance suite, printed at session end
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


def cycle_graph(n: int) -> RegularGraph:
    return RegularGraph.from_edges(n, [(i, (i + 1) % n) for i in range(n)], 2)


@pytest.fixture
def k4():
    return complete_graph(4)


@pytest.fixture
def c6():
    return cycle_graph(6)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
