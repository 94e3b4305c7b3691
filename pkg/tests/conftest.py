import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from fvi.fields import problem1, problem2, problem3, problem4

# numba dispatch makes the first example of a property slow; timing is not the point
settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def p1():
    return problem1()


@pytest.fixture(scope="session")
def p2():
    return problem2()


@pytest.fixture(scope="session")
def all_problems():
    return [problem1(), problem2(), problem3(0.01), problem4(0.01)]


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
