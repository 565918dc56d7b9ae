"""Finite-difference oracles and discrete convexity/coercivity probes.

These never call the analytic gradient code; they only evaluate energies.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

# certification tolerances, shared by tests and the gradcheck command
FD_STEP = 1e-6
CONVEXITY_STEP = 1e-4
GRAD_RTOL_XI = 1e-6
GRAD_RTOL_X = 1e-5
CONVEXITY_TOL = 1e-10
COERCIVITY_TOL = 1e-10
POLYCONVEXITY_TOL = 1e-8
DEFAULT_SEED = 20240611


def fd_gradient(f: Callable[[np.ndarray], float], point, step: float = FD_STEP,
                indices=None) -> np.ndarray:
    """Central differences with h_i = step * max(1, |x_i|).

    Components where f raises are returned as NaN. ``indices`` restricts the
    computation to a subset of flat components (others are NaN).
    """
    x0 = np.array(point, dtype=float)
    flat = x0.ravel()
    out = np.full(flat.size, np.nan)
    idx = range(flat.size) if indices is None else indices
    for i in idx:
        h = step * max(1.0, abs(flat[i]))
        xp = flat.copy()
        xm = flat.copy()
        xp[i] += h
        xm[i] -= h
        try:
            out[i] = (f(xp.reshape(x0.shape)) - f(xm.reshape(x0.shape))) / (2 * h)
        except Exception:
            out[i] = np.nan
    return out.reshape(x0.shape)


def directional_second_difference(f: Callable, point, direction, step: float = CONVEXITY_STEP) -> float:
    x = np.asarray(point, dtype=float)
    dvec = np.asarray(direction, dtype=float)
    return float((f(x + step * dvec) - 2.0 * f(x) + f(x - step * dvec)) / step**2)


def relative_error(analytic, reference) -> float:
    """max |a - r| / max |r| (max-norm relative error)."""
    a = np.asarray(analytic, dtype=float)
    r = np.asarray(reference, dtype=float)
    scale = np.abs(r).max()
    diff = np.abs(a - r).max()
    return float(diff / scale) if scale > 0 else float(diff)


def winslow_element_energy(Ehat, E, M) -> float:
    """tr(Ehat S Ehat^T), S = E^{-1} M^{-1} E^{-T}: written out independently."""
    Einv = np.linalg.inv(E)
    S = Einv @ np.linalg.inv(M) @ Einv.T
    return float(np.trace(Ehat @ S @ Ehat.T))


def coercivity_probe(E, M, samples: int = 1000, seed: int = DEFAULT_SEED):
    """alpha_K = lambda_min(E^{-1} M^{-1} E^{-T}) and the worst ratio
    I_K(Ehat) / (alpha_K tr(Ehat Ehat^T)) over random Ehat."""
    E = np.asarray(E, dtype=float)
    M = np.asarray(M, dtype=float)
    d = E.shape[0]
    Einv = np.linalg.inv(E)
    S = Einv @ np.linalg.inv(M) @ Einv.T
    alpha = float(np.linalg.eigvalsh(0.5 * (S + S.T))[0])
    rng = np.random.default_rng(seed)
    worst = np.inf
    for _ in range(samples):
        Eh = rng.standard_normal((d, d))
        ratio = winslow_element_energy(Eh, E, M) / (alpha * np.trace(Eh @ Eh.T))
        worst = min(worst, ratio)
    return alpha, float(worst)


def huang_polyconvex_second_difference(E, M, Ehat, delta_dir, E_dir, theta=1.0 / 3.0, p=2.0,
                                       step: float = CONVEXITY_STEP) -> float:
    """Second difference of the equidistribution-alignment element energy written as a function of
    the pair (Ehat, delta) with delta standing in for det(Ehat).

    The base point uses delta = det(Ehat).
    """
    E = np.asarray(E, dtype=float)
    d = E.shape[0]
    Einv = np.linalg.inv(E)
    S = Einv @ np.linalg.inv(M) @ Einv.T
    detM = np.linalg.det(M)
    q = d * p / 2.0
    c1 = theta * np.sqrt(detM)
    c2 = (1 - 2 * theta) * d**q * detM ** ((1 - p) / 2) * np.linalg.det(E) ** (-p)

    def F(Eh, delta):
        return c1 * np.trace(Eh @ S @ Eh.T) ** q + c2 * delta**p

    d0 = np.linalg.det(Ehat)
    return float((F(Ehat + step * E_dir, d0 + step * delta_dir) - 2 * F(Ehat, d0)
                  + F(Ehat - step * E_dir, d0 - step * delta_dir)) / step**2)
