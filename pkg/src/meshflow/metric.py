"""Nodal SPD metric tensors and their construction."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import InsufficientStencil, NonSPDCallback
from .mesh import SimplicialMesh

SPD_FLOOR = 1e-8
NONSPD_WARN_FRACTION = 0.0
HESSIAN_CONDITION = 1e4
HESSIAN_NOISE = 1e-8


@dataclass
class MetricField:
    tensors: np.ndarray  # (Nv, d, d)
    elements: np.ndarray  # (Ne, d+1), connectivity of the host mesh

    def __post_init__(self):
        self.tensors = np.asarray(self.tensors, dtype=float)
        t = self.tensors
        if not np.all(np.isfinite(t)):
            bad = np.flatnonzero(~np.isfinite(t).all(axis=(1, 2)))
            raise ValueError(f"metric tensors are not finite at vertices {bad[:5].tolist()}")
        asym = np.abs(t - np.swapaxes(t, 1, 2)).max(axis=(1, 2))
        scale = np.abs(t).max(axis=(1, 2))
        if np.any(asym > 1e-12 * np.maximum(scale, 1.0)):
            raise ValueError("metric tensors must be symmetric")
        if np.any(np.linalg.eigvalsh(t)[:, 0] <= 0):
            raise ValueError("metric tensors must be positive definite")

    @property
    def dim(self) -> int:
        return self.tensors.shape[-1]

    def centers(self) -> np.ndarray:
        """Linear interpolant at every element barycenter, (Ne, d, d)."""
        return self.tensors[self.elements].mean(axis=1)

    def element_nodal(self) -> np.ndarray:
        """Nodal tensors per element, (Ne, d+1, d, d)."""
        return self.tensors[self.elements]

    def det(self) -> np.ndarray:
        return np.linalg.det(self.tensors)

    def scaled(self, c: float) -> "MetricField":
        return MetricField(c * self.tensors, self.elements)


def metric_at_center(field: MetricField, k: int) -> np.ndarray:
    return field.tensors[field.elements[k]].mean(axis=0)


def spd_project(A, floor: float = SPD_FLOOR) -> np.ndarray:
    """Clamp eigenvalues of symmetric A (or a stack) at ``floor`` times the
    largest eigenvalue magnitude of the same tensor."""
    A = np.asarray(A, dtype=float)
    A = 0.5 * (A + np.swapaxes(A, -1, -2))
    w, V = np.linalg.eigh(A)
    top = np.abs(w).max(axis=-1, keepdims=True)
    lo = floor * np.where(top > 0, top, 1.0)
    w = np.maximum(w, lo)
    return (V * w[..., None, :]) @ np.swapaxes(V, -1, -2)


def build_identity(mesh: SimplicialMesh) -> MetricField:
    d = mesh.dim
    return MetricField(np.broadcast_to(np.eye(d), (mesh.n_vertices, d, d)).copy(), mesh.elements)


def tensors_from_callback(points: np.ndarray, callback: Callable, floor: float = SPD_FLOOR):
    """Evaluate a vectorized metric callback at points.

    The callback returns either (n,) scalars (read as scalar * I) or
    (n, d, d) tensors. Returns (tensors, number of floored tensors).
    """
    n, d = points.shape
    raw = np.asarray(callback(points), dtype=float)
    if not np.all(np.isfinite(raw)):
        raise ValueError("metric callback returned non-finite values")
    if raw.shape == (n,):
        raw = raw[:, None, None] * np.eye(d)
    elif raw.shape != (n, d, d):
        raise ValueError(f"metric callback returned shape {raw.shape}, expected ({n},) or ({n},{d},{d})")
    sym = 0.5 * (raw + np.swapaxes(raw, 1, 2))
    w = np.linalg.eigvalsh(sym)
    top = np.abs(w).max(axis=1)
    bad = w[:, 0] < floor * np.where(top > 0, top, 1.0)
    if bad.any():
        sym[bad] = spd_project(sym[bad], floor)
    return sym, int(bad.sum())


def build_analytic(mesh: SimplicialMesh, callback: Callable, floor: float = SPD_FLOOR) -> MetricField:
    tensors, nbad = tensors_from_callback(mesh.vertices, callback, floor)
    if nbad > NONSPD_WARN_FRACTION * mesh.n_vertices:
        warnings.warn(f"{nbad} metric tensors were not SPD and got floored", NonSPDCallback, stacklevel=2)
    return MetricField(tensors, mesh.elements)


def horseshoe_metric(R: float = 4.5) -> Callable:
    """Scalar metric concentrating near (0, 2R)."""

    def callback(x):
        return 1.0 + 1.0 / (x[:, 0] ** 2 + np.sqrt((x[:, 1] - 2 * R) ** 2 + 1e-8))

    return callback


# --------------------------------------------------------------------------
# Hessian-based metric


def _two_ring(mesh: SimplicialMesh) -> list[np.ndarray]:
    nb = mesh.vertex_neighbors()
    out = []
    for i, n1 in enumerate(nb):
        ring = np.unique(np.concatenate([n1] + [nb[j] for j in n1]))
        out.append(ring[ring != i])
    return out


def recover_hessians(mesh: SimplicialMesh, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-vertex Hessians from a least-squares quadratic fit over the 2-ring.

    Returns (H (Nv, d, d), ok (Nv,) bool); H is zero where the fit was rank-deficient.
    """
    x = mesh.vertices
    nv, d = x.shape
    iu, ju = np.triu_indices(d)
    ncoef = 1 + d + len(iu)
    H = np.zeros((nv, d, d))
    ok = np.ones(nv, dtype=bool)
    for i, ring in enumerate(_two_ring(mesh)):
        dx = x[ring] - x[i]
        h = np.abs(dx).max()
        if len(ring) + 1 < ncoef or h == 0:
            ok[i] = False
            continue
        dx = dx / h
        quad = dx[:, iu] * dx[:, ju] * np.where(iu == ju, 0.5, 1.0)
        A = np.hstack([np.ones((len(ring), 1)), dx, quad])
        A = np.vstack([np.eye(1, ncoef), A])  # the vertex itself
        b = np.concatenate([[u[i]], u[ring]])
        coef, _, rank, _ = np.linalg.lstsq(A, b, rcond=None)
        if rank < ncoef:
            ok[i] = False
            continue
        c = coef[1 + d:] / h**2
        H[i][iu, ju] = c
        H[i][ju, iu] = c
    return H, ok


def default_alpha(mesh: SimplicialMesh, eig: np.ndarray) -> float:
    """Regularization for |H| eigenvalues ``eig`` (Nv, d).

    The volume average of det|H|^(1/(d+4)), raised to (d+4)/d, so that
    alpha carries the units of H. Never below the value that caps the
    tensor condition number at ``HESSIAN_CONDITION``; 1 for a zero Hessian.
    """
    d = mesh.dim
    top = eig.max() if eig.size else 0.0
    if top <= 0:
        return 1.0
    vol = np.bincount(mesh.elements.ravel(), np.repeat(mesh.volumes(), d + 1), mesh.n_vertices)
    dens = np.prod(eig, axis=1) ** (1.0 / (d + 4))
    alpha = float((vol @ dens / vol.sum()) ** ((d + 4) / d))
    return max(alpha, top / (HESSIAN_CONDITION - 1.0))


def build_hessian_metric(mesh: SimplicialMesh, u, alpha: float | None = None,
                         scaling: float = 1.0) -> MetricField:
    """M_i = scaling * det(alpha I + |H_i|)^(-1/(d+4)) (alpha I + |H_i|).

    ``|H|`` takes absolute eigenvalues; see ``default_alpha`` for the
    default regularization.
    """
    u = np.asarray(u, dtype=float)
    d = mesh.dim
    H, ok = recover_hessians(mesh, u)
    if not ok.all():
        warnings.warn(f"rank-deficient Hessian fit at {int((~ok).sum())} vertices; using alpha*I there",
                      InsufficientStencil, stacklevel=2)
    w, V = np.linalg.eigh(H)
    w = np.abs(w)
    # curvature below fit roundoff counts as none (u linear gives H ~ 1e-13)
    w[w < HESSIAN_NOISE * np.abs(u).max() / mesh.bbox_diameter() ** 2] = 0.0
    if alpha is None:
        alpha = default_alpha(mesh, w)
    w = w + alpha
    scale = scaling * np.prod(w, axis=1) ** (-1.0 / (d + 4))
    tensors = (V * (w * scale[:, None])[:, None, :]) @ np.swapaxes(V, 1, 2)
    tensors = 0.5 * (tensors + np.swapaxes(tensors, 1, 2))
    return MetricField(tensors, mesh.elements)


# --------------------------------------------------------------------------
# metric sources: callables mesh -> MetricField, used by the adaptation loop


def identity_source(mesh: SimplicialMesh) -> MetricField:
    return build_identity(mesh)


def analytic_source(callback: Callable, floor: float = SPD_FLOOR) -> Callable:
    def source(mesh: SimplicialMesh) -> MetricField:
        return build_analytic(mesh, callback, floor)

    return source


def hessian_source(u: Callable, alpha: float | None = None) -> Callable:
    """Hessian metric of the function ``u`` sampled at the current vertices."""

    def source(mesh: SimplicialMesh) -> MetricField:
        return build_hessian_metric(mesh, u(mesh.vertices), alpha)

    return source


def fixed_source(field: MetricField) -> Callable:
    """Nodal tensors that stay attached to their vertices."""

    def source(mesh: SimplicialMesh) -> MetricField:
        return MetricField(field.tensors, mesh.elements)

    return source
