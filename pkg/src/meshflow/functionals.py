"""Energy densities G(J, r, M, x) of the harmonic (`winslow`) and
equidistribution-alignment (`huang`) meshing functionals and their partial
derivatives.

Inputs are single matrices or stacks (..., d, d); ``r`` and the returned
scalars carry the leading shape. Matrix derivatives use the layout of
:mod:`meshflow.matcalc`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import matcalc as mc
from .errors import FoldedElement

WINSLOW = "winslow"
HUANG = "huang"


@dataclass(frozen=True)
class FunctionalSpec:
    kind: str = HUANG
    theta: float = 1.0 / 3.0
    p: float = 2.0

    def __post_init__(self):
        kind = self.kind.lower()
        if kind not in (WINSLOW, HUANG):
            raise ValueError(f"unknown functional {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        if kind == HUANG:
            if not 0.0 <= self.theta <= 1.0:
                raise ValueError("theta must lie in [0, 1]")
            if not self.p > 0:
                raise ValueError("p must be positive")

    @classmethod
    def winslow(cls) -> "FunctionalSpec":
        return cls(WINSLOW)

    @classmethod
    def huang(cls, theta: float = 1.0 / 3.0, p: float = 2.0) -> "FunctionalSpec":
        return cls(HUANG, theta, p)

    def regime(self, d: int) -> dict:
        """Which of the coercivity/polyconvexity conditions hold in dimension d."""
        if self.kind == WINSLOW:
            return {"theta": True, "dp": True, "p": True, "coercive_polyconvex": True}
        flags = {"theta": 0 < self.theta <= 0.5, "dp": d * self.p >= 2, "p": self.p >= 1}
        flags["coercive_polyconvex"] = all(flags.values())
        return flags

    @property
    def p_is_integer(self) -> bool:
        return float(self.p).is_integer()


@dataclass
class GDerivatives:
    G: np.ndarray
    dG_dJ: np.ndarray
    dG_dr: np.ndarray
    dG_dM: np.ndarray
    dG_dx: np.ndarray


def _signed_power(spec: FunctionalSpec, r: np.ndarray, e: float) -> np.ndarray:
    # e is p or p - 1, so it is integral whenever p is
    if spec.p_is_integer:
        return r ** int(round(e))
    neg = np.flatnonzero(np.ravel(r) < 0)
    if neg.size:
        raise FoldedElement(neg, f"r < 0 with non-integer p={spec.p} at {neg[:5].tolist()}")
    return r ** e


class _Pieces:
    """Shared intermediate quantities for one batch of inputs."""

    def __init__(self, J, M, metric=None):
        self.d = J.shape[-1]
        # metric: optional precomputed (inverse, det) of M
        self.Minv, self.detM = metric if metric is not None else (np.linalg.inv(M), np.linalg.det(M))
        self.MinvJt = self.Minv @ mc.T(J)
        self.tr = mc.trace(J @ self.MinvJt)


def eval_G(spec: FunctionalSpec, J, r, M, x=None, metric=None):
    J = np.asarray(J, dtype=float)
    r = np.asarray(r, dtype=float)
    pc = _Pieces(J, np.asarray(M, dtype=float), metric)
    return _G(spec, pc, r)


def _G(spec, pc, r):
    if spec.kind == WINSLOW:
        return pc.tr
    d, th, p = pc.d, spec.theta, spec.p
    q = d * p / 2.0
    s = np.sqrt(pc.detM)
    first = th * s * pc.tr ** q
    c2 = (1.0 - 2.0 * th) * d ** q
    if c2 == 0.0:
        return first
    return first + c2 * s ** (1.0 - p) * _signed_power(spec, r, p)


def eval_derivatives(spec: FunctionalSpec, J, r, M, x=None, metric=None) -> GDerivatives:
    J = np.asarray(J, dtype=float)
    r = np.asarray(r, dtype=float)
    M = np.asarray(M, dtype=float)
    pc = _Pieces(J, M, metric)
    d = pc.d
    G = _G(spec, pc, r)
    dG_dx = np.zeros(r.shape + (d,))
    # d tr(J M^{-1} J^T)/dM
    dtr_dM = mc.d_tr_AMinvAt_dM(J, M)
    if spec.kind == WINSLOW:
        dG_dJ = mc.d_tr_AMAt_dA(J, pc.Minv)
        return GDerivatives(G, dG_dJ, np.zeros_like(r), dtr_dM, dG_dx)

    th, p = spec.theta, spec.p
    q = d * p / 2.0
    s = np.sqrt(pc.detM)
    ds_dM = 0.5 * s[..., None, None] * pc.Minv  # sqrt(det M) via d det/dM = det M^{-1}
    trq1 = pc.tr ** (q - 1.0)
    dG_dJ = (th * q * s * trq1)[..., None, None] * mc.d_tr_AMAt_dA(J, pc.Minv)
    dG_dM = th * (trq1 * pc.tr)[..., None, None] * ds_dM \
        + (th * s * q * trq1)[..., None, None] * dtr_dM
    c2 = (1.0 - 2.0 * th) * d ** q
    if c2 == 0.0:
        dG_dr = np.zeros_like(r)
    else:
        dG_dr = p * c2 * s ** (1.0 - p) * _signed_power(spec, r, p - 1.0)
        rp = _signed_power(spec, r, p)
        dG_dM = dG_dM + (c2 * (1.0 - p) * s ** (-p) * rp)[..., None, None] * ds_dM
    return GDerivatives(G, dG_dJ, dG_dr, dG_dM, dG_dx)
