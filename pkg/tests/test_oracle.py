import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from meshflow.oracle import (CONVEXITY_TOL, coercivity_probe, directional_second_difference,
                             fd_gradient, huang_polyconvex_second_difference, relative_error)

from helpers import random_spd


def test_fd_exact_on_quadratic(rng):
    A = rng.standard_normal((5, 5))
    b = rng.standard_normal(5)
    x = rng.standard_normal(5)
    g = fd_gradient(lambda z: z @ A @ z + b @ z, x)
    np.testing.assert_allclose(g, (A + A.T) @ x + b, atol=1e-8)


def test_fd_constant():
    np.testing.assert_array_equal(fd_gradient(lambda z: 3.0, np.ones((2, 3))), np.zeros((2, 3)))


def test_fd_nan_where_undefined():
    def f(z):
        if z[0] > 1.0:
            raise FloatingPointError
        return z.sum()

    g = fd_gradient(f, np.array([1.0, 0.0]))
    assert np.isnan(g[0]) and g[1] == pytest.approx(1.0)


def test_fd_subset():
    g = fd_gradient(lambda z: (z ** 2).sum(), np.array([1.0, 2.0, 3.0]), indices=[1])
    assert np.isnan(g[0]) and g[1] == pytest.approx(4.0) and np.isnan(g[2])


@given(st.lists(st.floats(-3, 3), min_size=3, max_size=3))
def test_second_difference_quadratic(direction):
    rng = np.random.default_rng(0)
    B = rng.standard_normal((3, 3))
    A = B @ B.T
    d = np.array(direction)
    val = directional_second_difference(lambda z: z @ A @ z, rng.standard_normal(3), d)
    assert val == pytest.approx(2 * d @ A @ d, rel=1e-5, abs=1e-6)
    assert val >= -1e-6


def test_second_difference_linear():
    assert abs(directional_second_difference(lambda z: 2 * z.sum() + 1, np.ones(4), np.arange(4.0))) < 1e-6


def test_relative_error():
    assert relative_error([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert relative_error([1.0, 2.2], [1.0, 2.0]) == pytest.approx(0.1)
    assert relative_error([1e-3], [0.0]) == 1e-3


class TestCoercivity:
    def test_identity(self):
        alpha, worst = coercivity_probe(np.eye(2), np.eye(2), samples=200)
        assert alpha == pytest.approx(1.0)
        assert worst == pytest.approx(1.0, rel=1e-12)

    def test_scaled_metric(self):
        alpha, worst = coercivity_probe(np.eye(2), 4 * np.eye(2), samples=200)
        assert alpha == pytest.approx(0.25)
        assert worst >= 1 - CONVEXITY_TOL

    def test_random(self, rng):
        for d in (2, 3):
            E = rng.standard_normal((d, d)) + 2 * np.eye(d)
            _, worst = coercivity_probe(E, random_spd(rng, d), samples=1000)
            assert worst >= 1 - 1e-10


@given(st.integers(0, 1000))
def test_huang_polyconvex_in_regime(seed):
    rng = np.random.default_rng(seed)
    d = 2
    E = rng.standard_normal((d, d)) + 2 * np.eye(d)
    M = random_spd(rng, d)
    Eh = rng.standard_normal((d, d)) + 2 * np.eye(d)
    val = huang_polyconvex_second_difference(E, M, Eh, rng.standard_normal(), rng.standard_normal((d, d)))
    assert val >= -1e-8
