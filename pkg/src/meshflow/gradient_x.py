"""Gradient of |K| I_K with respect to physical vertex coordinates.

Differentiating in x moves the element volume, the affine Jacobian and the
point x_K at which the metric is sampled. The metric is a linear field on
each element defined by its nodal tensors, so dM/dx comes from the basis
function gradients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import matcalc as mc
from .functionals import WINSLOW, FunctionalSpec, eval_derivatives
from .gradient_xi import ElementGradient, _as_matrix, balancing_factor
from .mesh import assemble_rows, edge_matrices, simplex_volumes


@dataclass
class BasisGradients:
    rows: np.ndarray  # (d+1, d); row j = d(phi_j)/dx


def _basis_rows(Einv: np.ndarray) -> np.ndarray:
    return np.concatenate([-Einv.sum(axis=-2, keepdims=True), Einv], axis=-2)


def basis_gradients(E) -> BasisGradients:
    from .mesh import EdgeMatrix

    Em = E if isinstance(E, EdgeMatrix) else EdgeMatrix.from_matrix(E)
    return BasisGradients(_basis_rows(Em.inverse))


def _x_terms(spec, E, Ehat, Mnodal):
    """Returns (core (Ne,d,d), metric row B (Ne,d), C row (Ne,d), vol, G)."""
    d = E.shape[-1]
    Einv = np.linalg.inv(E)
    detE = np.linalg.det(E)
    vol = simplex_volumes(detE, d)
    J = Ehat @ Einv
    r = np.linalg.det(Ehat) / detE
    MK = Mnodal.mean(axis=-3)
    g = eval_derivatives(spec, J, r, MK)
    core = g.G[..., None, None] * Einv - Einv @ g.dG_dJ @ Ehat @ Einv
    if spec.kind != WINSLOW:
        core = core - (g.dG_dr * r)[..., None, None] * Einv
    # tr(dG/dM M_j) for each local vertex j
    w = mc.trace(g.dG_dM[..., None, :, :] @ Mnodal)  # (Ne, d+1)
    dphi = _basis_rows(Einv)  # (Ne, d+1, d)
    B = np.einsum("ej,ejk->ek", w, dphi) / (d + 1)
    C = g.dG_dx / (d + 1)
    return core, B, C, vol, g.G


def element_grads_x(spec: FunctionalSpec, E, Ehat, Mnodal) -> np.ndarray:
    """d(|K| I_K)/d[x_0..x_d] for a stack of elements, shape (Ne, d+1, d)."""
    core, B, C, vol, _ = _x_terms(spec, E, Ehat, Mnodal)
    extra = (B + C)[..., None, :]
    rows = np.concatenate([-core.sum(axis=-2, keepdims=True) + extra, core + extra], axis=-2)
    return vol[..., None, None] * rows


def element_grad_x(spec: FunctionalSpec, E, Ehat, Mnodal, coords=None) -> ElementGradient:
    """Single-element version; ``coords`` is accepted for API symmetry (E already encodes them)."""
    rows = element_grads_x(spec, _as_matrix(E)[None], _as_matrix(Ehat)[None],
                           np.asarray(Mnodal, dtype=float)[None])[0]
    return ElementGradient(rows, "x")


def local_velocities_x_batch(spec: FunctionalSpec, E, Ehat, Mnodal) -> np.ndarray:
    core, B, C, _, _ = _x_terms(spec, E, Ehat, Mnodal)
    d = E.shape[-1]
    v = -core - (B + C)[..., None, :]
    # v_0 keeps its own metric and x terms rather than the plain negative sum
    v0 = -v.sum(axis=-2) - (d + 1) * (B + C)
    return np.concatenate([v0[..., None, :], v], axis=-2)


def local_velocities_x(spec: FunctionalSpec, E, Ehat, Mnodal) -> np.ndarray:
    return local_velocities_x_batch(spec, _as_matrix(E)[None], _as_matrix(Ehat)[None],
                                    np.asarray(Mnodal, dtype=float)[None])[0]


class XEnergy:
    """I_h and its gradient as functions of the physical coordinates, with the
    computational (reference) mesh fixed and nodal metrics supplied per call."""

    def __init__(self, spec: FunctionalSpec, elements: np.ndarray, computational: np.ndarray):
        self.spec = spec
        self.elements = np.asarray(elements)
        self.nv, self.d = computational.shape
        self.Ehat = edge_matrices(computational, self.elements)

    def value(self, x: np.ndarray, nodal: np.ndarray) -> float:
        from .gradient_xi import element_energies

        E = edge_matrices(x, self.elements)
        vol = simplex_volumes(np.linalg.det(E), self.d)
        MK = nodal[self.elements].mean(axis=1)
        return float(np.dot(vol, element_energies(self.spec, E, self.Ehat, MK)))

    def gradient(self, x: np.ndarray, nodal: np.ndarray) -> np.ndarray:
        E = edge_matrices(x, self.elements)
        rows = element_grads_x(self.spec, E, self.Ehat, nodal[self.elements])
        return assemble_rows(self.elements, rows, self.nv)

    def balancing(self, nodal: np.ndarray) -> np.ndarray:
        return balancing_factor(self.spec, nodal)
