import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from meshflow.errors import NonSPDCallback
from meshflow.functionals import FunctionalSpec
from meshflow.gradient_xi import balancing_factor
from meshflow.meshgen import criss_cross, random_mesh, tet_grid
from meshflow.metric import (MetricField, build_analytic, build_hessian_metric, build_identity,
                             horseshoe_metric, metric_at_center, recover_hessians, spd_project)

from helpers import random_spd


def one_triangle():
    from meshflow.mesh import SimplicialMesh

    return SimplicialMesh(np.array([[0.0, 0], [1, 0], [0, 1]]), np.array([[0, 1, 2]]))


class TestCenter:
    def test_identity(self):
        f = build_identity(one_triangle())
        np.testing.assert_array_equal(metric_at_center(f, 0), np.eye(2))

    def test_mean(self):
        f = MetricField(np.stack([np.eye(2), 2 * np.eye(2), 3 * np.eye(2)]), np.array([[0, 1, 2]]))
        np.testing.assert_allclose(metric_at_center(f, 0), 2 * np.eye(2))

    def test_matches_barycentric_interpolant(self, rng):
        m = random_mesh(3, 3, seed=1)
        f = MetricField(random_spd(rng, 3, m.n_vertices), m.elements)
        lam = np.full(4, 0.25)
        for k in range(m.n_elements):
            direct = sum(l * f.tensors[v] for l, v in zip(lam, m.elements[k]))
            np.testing.assert_allclose(metric_at_center(f, k), direct, rtol=1e-14)
        np.testing.assert_allclose(f.centers()[5], metric_at_center(f, 5), rtol=1e-15)


class TestIdentity:
    def test_eigenvalues(self):
        f = build_identity(tet_grid(3))
        np.testing.assert_allclose(np.linalg.eigvalsh(f.tensors).min(), 1.0)

    def test_balancing_is_one(self):
        f = build_identity(criss_cross(4))
        for spec in (FunctionalSpec.winslow(), FunctionalSpec.huang()):
            np.testing.assert_array_equal(balancing_factor(spec, f), 1.0)

    def test_balancing_examples(self):
        t = np.broadcast_to(4 * np.eye(2), (3, 2, 2))
        assert balancing_factor(FunctionalSpec.winslow(), t) == pytest.approx([4, 4, 4])
        assert balancing_factor(FunctionalSpec.huang(p=2), t) == pytest.approx([4, 4, 4])


class TestAnalytic:
    def test_identity_callback(self):
        m = criss_cross(4)
        f = build_analytic(m, lambda x: np.broadcast_to(np.eye(2), (len(x), 2, 2)))
        np.testing.assert_array_equal(f.tensors, build_identity(m).tensors)

    def test_horseshoe_peak(self):
        cb = horseshoe_metric(4.5)
        vals = cb(np.array([[0.0, 9.0], [1.0, 9.0]]))
        assert vals[0] == pytest.approx(10001.0, rel=1e-12)
        assert vals[1] == pytest.approx(1 + 1 / (1 + 1e-4), rel=1e-12)
        assert vals[1] == pytest.approx(1.99990001, rel=1e-8)

    def test_scalar_becomes_tensor(self):
        m = criss_cross(3)
        f = build_analytic(m, lambda x: 1 + x[:, 0])
        np.testing.assert_allclose(f.tensors[:, 0, 1], 0.0)
        np.testing.assert_allclose(f.tensors[:, 0, 0], 1 + m.vertices[:, 0])

    def test_non_spd_warns_and_floors(self):
        m = criss_cross(3)
        with pytest.warns(NonSPDCallback):
            f = build_analytic(m, lambda x: np.broadcast_to(np.diag([1.0, -1.0]), (len(x), 2, 2)))
        assert np.linalg.eigvalsh(f.tensors).min() > 0

    def test_shape_error(self):
        with pytest.raises(ValueError):
            build_analytic(criss_cross(3), lambda x: np.ones((len(x), 3)))

    def test_field_rejects_indefinite(self):
        with pytest.raises(ValueError):
            MetricField(np.array([np.diag([1.0, -1.0])]), np.array([[0, 0, 0]]))


class TestSPDProject:
    def test_identity(self):
        np.testing.assert_allclose(spd_project(np.eye(2)), np.eye(2))

    def test_clamp(self):
        np.testing.assert_allclose(spd_project(np.diag([1.0, -1.0]), 1e-8), np.diag([1.0, 1e-8]), atol=1e-20)

    @given(arrays(np.float64, (3, 3), elements=st.floats(-10, 10)))
    def test_random_symmetric(self, A):
        A = A + A.T
        out = spd_project(A, 1e-8)
        top = max(np.abs(np.linalg.eigvalsh(0.5 * (A + A.T))).max(), 0.0)
        floor = 1e-8 * (top if top > 0 else 1.0)
        assert np.linalg.eigvalsh(out).min() >= floor * (1 - 1e-6)


class TestHessian:
    def test_zero_function(self):
        m = criss_cross(6)
        f = build_hessian_metric(m, np.zeros(m.n_vertices))
        for t in f.tensors:
            np.testing.assert_allclose(t, t[0, 0] * np.eye(2), atol=1e-15)

    def test_quadratic_recovery(self):
        m = criss_cross(21)
        u = (m.vertices ** 2).sum(axis=1)
        H, ok = recover_hessians(m, u)
        centre = np.argmin(np.linalg.norm(m.vertices - 0.5, axis=1))
        assert ok[centre]
        np.testing.assert_allclose(H[centre], 2 * np.eye(2), rtol=0.1, atol=0.2)

    def test_linear_function(self):
        m = random_mesh(2, 7, seed=2)
        u = 3 * m.vertices[:, 0] - 2 * m.vertices[:, 1] + 1
        H, _ = recover_hessians(m, u)
        assert np.abs(H).max() < 1e-8
        f = build_hessian_metric(m, u)
        for t in f.tensors:
            np.testing.assert_allclose(t, t[0, 0] * np.eye(2), rtol=1e-6, atol=1e-6 * t[0, 0])

    def test_anisotropy_follows_hessian(self):
        m = criss_cross(15)
        u = 10 * m.vertices[:, 1] ** 2
        f = build_hessian_metric(m, u, alpha=1.0)
        interior = np.setdiff1d(np.arange(m.n_vertices), m.boundary_vertices())
        t = f.tensors[interior]
        assert np.all(t[:, 1, 1] > t[:, 0, 0])

    def test_3d_quadratic(self):
        m = tet_grid(7, (0, 0, 0), (1, 1, 1))
        u = m.vertices[:, 0] ** 2 + 2 * m.vertices[:, 1] * m.vertices[:, 2]
        H, ok = recover_hessians(m, u)
        centre = np.argmin(np.linalg.norm(m.vertices - 0.5, axis=1))
        expect = np.array([[2, 0, 0], [0, 0, 2], [0, 2, 0]], dtype=float)
        np.testing.assert_allclose(H[centre], expect, atol=1e-8)

    def test_rank_deficient_warns(self):
        m = one_triangle()
        with warnings.catch_warnings(record=True) as w:
            warnings.simplefilter("always")
            f = build_hessian_metric(m, np.array([0.0, 1.0, 2.0]))
        assert any("rank-deficient" in str(x.message) for x in w)
        assert np.all(np.linalg.eigvalsh(f.tensors) > 0)


def test_non_finite_metric_rejected():
    m = criss_cross(3)
    with np.errstate(divide="ignore"), pytest.raises(ValueError, match="non-finite"):
        build_analytic(m, lambda x: 1.0 / np.abs(x - 0.5).sum(axis=1))
    t = np.broadcast_to(np.eye(2), (m.n_vertices, 2, 2)).copy()
    t[2, 0, 0] = np.nan
    with pytest.raises(ValueError, match="not finite"):
        MetricField(t, m.elements)
