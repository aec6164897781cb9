import numpy as np
import pytest

from nextsca.apps import build_cartography, build_localization
from nextsca.graph import constant_schedule, geometric_graph


def localization_desk(seed=0):
    """Ten sensors, one target, exact measurements."""
    return build_localization(I=10, N_T=1, snr_db=None, seed=seed)


def cartography_desk(seed=0):
    return build_cartography(I=10, N_s=2, N_b=4, N_f=12, lam=1e-3, snr_db=3.0, seed=seed)


def sensor_schedule(problem, radius=0.4):
    pos = problem.instance.positions
    return constant_schedule(geometric_graph(len(pos), radius, positions=pos))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def loc_desk():
    problem, truth = localization_desk(0)
    return problem, truth, sensor_schedule(problem)


@pytest.fixture(scope="session")
def carto_desk():
    problem, truth = cartography_desk(0)
    return problem, truth, constant_schedule(geometric_graph(10, 0.4, seed=0))


# Lines recorded by the acceptance suite, repeated at the end of the session
# so they survive output capture.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
