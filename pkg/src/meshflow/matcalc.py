"""Scalar-by-matrix derivative identities.

Layout convention: for scalar f(A) with A of shape (m, n), ``df/dA`` has
shape (n, m) with ``(df/dA)[i, j] = df/dA[j, i]``. With this layout the
chain rule reads ``df/dt = tr(df/dA @ dA/dt)``.

All functions accept stacks of matrices in the leading axes.
"""

from __future__ import annotations

import numpy as np


def T(A):
    return np.swapaxes(A, -1, -2)


def trace(A):
    return np.trace(A, axis1=-2, axis2=-1)


def chain_rule(df_dA, dA_dt):
    """df/dt from a layout-convention derivative and the parameter derivative of A."""
    return trace(df_dA @ dA_dt)


def d_trace(A):
    """d tr(A) / dA = I."""
    return np.broadcast_to(np.eye(A.shape[-1]), A.shape).copy()


def d_det(A):
    """d det(A) / dA = det(A) A^{-1}."""
    return np.linalg.det(A)[..., None, None] * np.linalg.inv(A)


def d_inverse_dt(A, dA_dt):
    """d A^{-1} / dt = -A^{-1} (dA/dt) A^{-1}."""
    Ainv = np.linalg.inv(A)
    return -Ainv @ dA_dt @ Ainv


def d_tr_AMAt_dA(A, M):
    """d tr(A M A^T) / dA = 2 M A^T, M symmetric and independent of A."""
    return 2.0 * M @ T(A)


def d_tr_AinvT_Minv_Ainv_dA(A, M):
    """d tr(A^{-T} M^{-1} A^{-1}) / dA = -2 A^{-1} A^{-T} M^{-1} A^{-1}."""
    Ainv = np.linalg.inv(A)
    return -2.0 * Ainv @ T(Ainv) @ np.linalg.inv(M) @ Ainv


def d_tr_AMAt_dM(A, M=None):
    """d tr(A M A^T) / dM = A^T A."""
    return T(A) @ A


def d_tr_AMinvAt_dM(A, M):
    """d tr(A M^{-1} A^T) / dM = -M^{-1} A^T A M^{-1}."""
    Minv = np.linalg.inv(M)
    return -Minv @ T(A) @ A @ Minv


def d_tr_ABC_dB(A, C):
    """d tr(A B C) / dB = C A, for A and C independent of B."""
    return C @ A
