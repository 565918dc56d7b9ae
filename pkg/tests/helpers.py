"""Shared test utilities."""

import numpy as np


def random_spd(rng, d, n=None, spread=0.5):
    shape = (d, d) if n is None else (n, d, d)
    A = rng.standard_normal(shape) * spread
    return A @ np.swapaxes(A, -1, -2) + np.eye(d)
