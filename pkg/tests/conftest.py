import numpy as np
import pytest

from dgsmpc.bank import OperatorBank
from dgsmpc.model import PlantModel, coupled_tank_model
from dgsmpc.synthesis import default_grid, generate_gain_library


@pytest.fixture(scope="session")
def tank():
    return coupled_tank_model()


@pytest.fixture(scope="session")
def small_library(tank):
    """200-point log grid; enough resolution for behavioural tests."""
    return generate_gain_library(tank, default_grid(200))


@pytest.fixture(scope="session")
def small_bank(tank, small_library):
    return OperatorBank.from_library(tank, small_library)


@pytest.fixture(scope="session")
def full_library(tank):
    return generate_gain_library(tank, default_grid(2000))


@pytest.fixture(scope="session")
def full_bank(tank, full_library):
    return OperatorBank.from_library(tank, full_library)


def scalar_model(a=0.5, b=1.0, c=1.0, q=1.0, r=1.0, omega=1.0, gamma=0.9, e=1.5, N=1):
    return PlantModel(A=[[a]], B=[[b]], C=[[c]], Q=[[q]], R=[[r]], Omega=[[omega]],
                      gamma=gamma, e=e, N=N)


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
        for key in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[key])
