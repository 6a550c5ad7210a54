import pytest
from hypothesis import HealthCheck, settings

from gnnaccel.datasets import planar_surrogate, random_graph, toy6

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def toy():
    return toy6()


@pytest.fixture(scope="session")
def ak2010():
    return planar_surrogate()


@pytest.fixture(scope="session")
def small_randoms():
    return [random_graph(n, m, seed) for n, m, seed in ((37, 120, 1), (400, 1500, 2), (1000, 3000, 3))]
