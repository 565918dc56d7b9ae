import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from meshflow.meshgen import criss_cross, random_mesh, square_two_triangles, tet_grid

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def unit_square():
    return square_two_triangles()


@pytest.fixture
def grid11():
    return criss_cross(11)


@pytest.fixture
def small_tets():
    return tet_grid(3, (0, 0, 0), (1, 1, 1))


@pytest.fixture
def jittered2d():
    return random_mesh(2, 6, seed=3)
