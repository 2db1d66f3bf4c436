import numpy as np
import pytest

from slowfront import nonlinearity, rdsolver, waves


@pytest.fixture(scope="session")
def f2():
    return nonlinearity.ricker_normalized(2.0)


@pytest.fixture(scope="session")
def fe02(f2):
    return nonlinearity.build_bistable_extension(f2, 0.2)


@pytest.fixture(scope="session")
def mono_front(f2):
    """Measured monostable front, p=2, tau=0.5."""
    return waves.measure_front_speed(f2, 0.5)


@pytest.fixture(scope="session")
def kpp_front(f2):
    return waves.measure_front_speed(f2, 0.0)


@pytest.fixture(scope="session")
def bistable_front(fe02):
    return waves.bistable_speed(fe02, 0.5)


@pytest.fixture(scope="session")
def ball_data():
    return rdsolver.build_initial_data({"shape": "ball", "radius": 1.0}, 0.2, 0.9)


@pytest.fixture(scope="session")
def ball_run(f2, ball_data):
    """eps = 0.04 radial N=2 run to T=1 with 101 snapshots and a centre probe."""
    g = rdsolver.radial_grid(4.0, 800, 2)
    times = np.round(np.linspace(0.0, 1.0, 101), 12)
    return rdsolver.solve_scaled(0.04, f2, 0.5, ball_data, g, 1.0, times,
                                 rdsolver.Numerics(probes=(0,)))
