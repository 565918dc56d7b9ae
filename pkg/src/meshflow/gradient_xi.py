"""Discrete functional and its gradient with respect to computational coordinates.

The physical mesh and the metric are data here: |K|, E_K and M(x_K) are
frozen while the computational vertices move.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import matcalc as mc
from .functionals import HUANG, WINSLOW, FunctionalSpec, eval_derivatives, eval_G
from .mesh import (BoundaryTags, Constraint, EdgeMatrix, MeshTriple, assemble_rows,
                   constrain_velocity, edge_matrices, simplex_volumes)
from .metric import MetricField


@dataclass
class ElementGradient:
    rows: np.ndarray  # (d+1, d); row j is the derivative with respect to vertex j
    formulation: str  # "xi" or "x"


@dataclass
class AssembledGradient:
    values: np.ndarray  # (Nv, d)

    @property
    def norm_inf(self) -> float:
        return float(np.abs(self.values).max()) if self.values.size else 0.0

    @property
    def norm_2(self) -> float:
        return float(np.linalg.norm(self.values))

    def constrained(self, coords, tags: BoundaryTags,
                    constraints: Sequence[Constraint] | None = None) -> "AssembledGradient":
        return AssembledGradient(constrain_velocity(self.values.copy(), coords, tags, constraints))


def _as_matrix(E):
    return E.matrix if isinstance(E, EdgeMatrix) else np.asarray(E, dtype=float)


def _jacobian_pieces(Einv, detE, Ehat, need_inverse=True):
    Ehinv = np.linalg.inv(Ehat) if need_inverse else None
    detEh = np.linalg.det(Ehat)
    J = Ehat @ Einv
    r = detEh / detE
    return J, r, Ehinv


def element_energies(spec: FunctionalSpec, E, Ehat, MK) -> np.ndarray:
    """I_K for a stack of elements."""
    Einv = np.linalg.inv(E)
    J, r, _ = _jacobian_pieces(Einv, np.linalg.det(E), Ehat, need_inverse=False)
    return eval_G(spec, J, r, MK)


def element_grads_xi(spec: FunctionalSpec, E, Ehat, MK, Einv=None, detE=None,
                     metric=None) -> np.ndarray:
    """dI_K/d[xi_0..xi_d] for a stack of elements, shape (Ne, d+1, d)."""
    if Einv is None:
        Einv = np.linalg.inv(E)
    if detE is None:
        detE = np.linalg.det(E)
    J, r, Ehinv = _jacobian_pieces(Einv, detE, Ehat, spec.kind != WINSLOW)
    g = eval_derivatives(spec, J, r, MK, metric=metric)
    D = Einv @ g.dG_dJ
    if spec.kind != WINSLOW:
        D = D + (g.dG_dr * r)[..., None, None] * Ehinv
    return np.concatenate([-D.sum(axis=-2, keepdims=True), D], axis=-2)


def element_energy(spec: FunctionalSpec, E, Ehat, MK) -> float:
    return float(element_energies(spec, _as_matrix(E)[None], _as_matrix(Ehat)[None],
                                  np.asarray(MK, dtype=float)[None])[0])


def element_grad_xi(spec: FunctionalSpec, E, Ehat, MK) -> ElementGradient:
    rows = element_grads_xi(spec, _as_matrix(E)[None], _as_matrix(Ehat)[None],
                            np.asarray(MK, dtype=float)[None])[0]
    return ElementGradient(rows, "xi")


def local_velocities_xi(spec: FunctionalSpec, E, Ehat, MK) -> np.ndarray:
    """Rows v_0..v_d; the negated element gradient."""
    return -element_grad_xi(spec, E, Ehat, MK).rows


def balancing_factor(spec: FunctionalSpec, field: MetricField | np.ndarray) -> np.ndarray:
    """Per-vertex P_i making the flow invariant under M -> cM."""
    t = field.tensors if isinstance(field, MetricField) else np.asarray(field)
    d = t.shape[-1]
    det = np.linalg.det(t)
    if spec.kind == WINSLOW:
        return det ** (1.0 / d)
    return det ** ((spec.p - 1.0) / 2.0)


class XiEnergy:
    """I_h and its gradient as functions of the computational coordinates.

    Caches everything that depends only on the physical mesh and metric.
    """

    def __init__(self, spec: FunctionalSpec, elements: np.ndarray, physical: np.ndarray,
                 field: MetricField):
        self.spec = spec
        self.elements = np.asarray(elements)
        self.nv, self.d = physical.shape
        E = edge_matrices(physical, self.elements)
        self.detE = np.linalg.det(E)
        self.Einv = np.linalg.inv(E)
        self.vol = simplex_volumes(self.detE, self.d)
        self.MK = field.centers()
        self.metric = (np.linalg.inv(self.MK), np.linalg.det(self.MK))
        self.P = balancing_factor(spec, field)

    def ehat(self, xi: np.ndarray) -> np.ndarray:
        return edge_matrices(xi, self.elements)

    def element_energies(self, xi: np.ndarray) -> np.ndarray:
        J, r, _ = _jacobian_pieces(self.Einv, self.detE, self.ehat(xi), need_inverse=False)
        return eval_G(self.spec, J, r, self.MK, metric=self.metric)

    def value(self, xi: np.ndarray) -> float:
        return float(np.dot(self.vol, self.element_energies(xi)))

    def element_grads(self, xi: np.ndarray) -> np.ndarray:
        return element_grads_xi(self.spec, None, self.ehat(xi), self.MK, self.Einv, self.detE,
                                self.metric)

    def gradient(self, xi: np.ndarray) -> np.ndarray:
        rows = self.vol[:, None, None] * self.element_grads(xi)
        return assemble_rows(self.elements, rows, self.nv)


def discrete_functional(spec: FunctionalSpec, triple: MeshTriple, field: MetricField) -> float:
    return XiEnergy(spec, triple.elements, triple.physical, field).value(triple.computational)


def assemble_grad_xi(spec: FunctionalSpec, triple: MeshTriple, field: MetricField,
                     patches=None, constraints: Sequence[Constraint] | None = None,
                     apply_constraints: bool = False) -> AssembledGradient:
    """dI_h/dxi_i = sum over the patch of |K| dI_K/dxi_{i_K}.

    ``patches`` is accepted for interface symmetry; assembly goes through a
    fixed-order bincount over the connectivity, which visits exactly the
    patch entries of each vertex.
    """
    g = AssembledGradient(XiEnergy(spec, triple.elements, triple.physical, field)
                          .gradient(triple.computational))
    if apply_constraints:
        g = g.constrained(triple.computational, triple.tags, constraints)
    return g


def winslow_coercivity_constant(E, MK) -> np.ndarray:
    """Smallest eigenvalue of S = E^{-1} M^{-1} E^{-T} per element."""
    Einv = np.linalg.inv(E)
    S = Einv @ np.linalg.inv(MK) @ mc.T(Einv)
    return np.linalg.eigvalsh(0.5 * (S + mc.T(S)))[..., 0]


__all__ = [
    "HUANG", "WINSLOW", "ElementGradient", "AssembledGradient", "XiEnergy",
    "element_energy", "element_energies", "element_grad_xi", "element_grads_xi",
    "local_velocities_xi", "balancing_factor", "discrete_functional", "assemble_grad_xi",
    "winslow_coercivity_constant",
]
