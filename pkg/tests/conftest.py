import numpy as np
import pytest

from finslerkit.catalog import build_lagrangian, friedmann_matrix


@pytest.fixture(scope="session")
def mink4():
    return build_lagrangian("minkowski", 4)


@pytest.fixture(scope="session")
def mink2():
    return build_lagrangian("minkowski", 2)


@pytest.fixture(scope="session")
def friedmann_exp():
    """Quadratic Friedmann metric with a(t) = exp(t)."""
    return build_lagrangian("quadratic_metric", 4, {"matrix": friedmann_matrix("exp(x0)")})


@pytest.fixture(scope="session")
def friedmann_linear():
    """Quadratic Friedmann metric with a(t) = t (evaluate at t > 0)."""
    return build_lagrangian("quadratic_metric", 4, {"matrix": friedmann_matrix("x0")})


@pytest.fixture(scope="session")
def affine_exp():
    return build_lagrangian("affine_sphere_friedmann", 4, {"a": "exp(x0)"})


@pytest.fixture(scope="session")
def affine_static():
    return build_lagrangian("affine_sphere_friedmann", 4, {"a": "1"})


@pytest.fixture(scope="session")
def quartic3():
    return build_lagrangian("quartic", 3)


@pytest.fixture(scope="session")
def quartic2_timelike():
    return build_lagrangian("quartic", 2, {"sign": -1})


@pytest.fixture()
def rng():
    return np.random.default_rng(20240817)
