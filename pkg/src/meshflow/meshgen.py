"""Structured simplicial meshes used by the experiments and tests."""

from __future__ import annotations

from itertools import permutations

import numpy as np

from .mesh import SimplicialMesh


def _orient(vertices: np.ndarray, elements: np.ndarray) -> np.ndarray:
    """Swap the last two local vertices of negatively oriented elements."""
    v = vertices[elements]
    E = np.swapaxes(v[:, 1:] - v[:, :1], 1, 2)
    neg = np.linalg.det(E) < 0
    elements = elements.copy()
    elements[neg, -2], elements[neg, -1] = elements[neg, -1], elements[neg, -2].copy()
    return elements


def interval_mesh(n: int, lo: float = 0.0, hi: float = 1.0) -> SimplicialMesh:
    x = np.linspace(lo, hi, n)[:, None]
    e = np.stack([np.arange(n - 1), np.arange(1, n)], axis=1)
    return SimplicialMesh(x, e)


def square_two_triangles() -> SimplicialMesh:
    """Unit square split along the (0,0)-(1,1) diagonal."""
    v = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    return SimplicialMesh(v, np.array([[0, 1, 2], [0, 2, 3]]))


def criss_cross(n: int, lo=(0.0, 0.0), hi=(1.0, 1.0)) -> SimplicialMesh:
    """n x n grid of vertices; every cell gets a center vertex and four triangles.

    Grid vertex (i, j) has index j*n + i; cell centers follow.
    """
    xs = np.linspace(lo[0], hi[0], n)
    ys = np.linspace(lo[1], hi[1], n)
    X, Y = np.meshgrid(xs, ys)
    grid = np.stack([X.ravel(), Y.ravel()], axis=1)
    cx = 0.5 * (xs[:-1] + xs[1:])
    cy = 0.5 * (ys[:-1] + ys[1:])
    CX, CY = np.meshgrid(cx, cy)
    centers = np.stack([CX.ravel(), CY.ravel()], axis=1)
    verts = np.vstack([grid, centers])
    i, j = np.meshgrid(np.arange(n - 1), np.arange(n - 1))
    i, j = i.ravel(), j.ravel()
    a = j * n + i
    b = a + 1
    c = a + n + 1
    d = a + n
    m = n * n + j * (n - 1) + i
    tris = np.concatenate([np.stack(t, axis=1) for t in ((m, a, b), (m, b, c), (m, c, d), (m, d, a))])
    return SimplicialMesh(verts, tris)


def tet_grid(n: int, lo=(-2.0, -2.0, -2.0), hi=(2.0, 2.0, 2.0)) -> SimplicialMesh:
    """n^3 vertex tensor grid, each cube cut into six tetrahedra along its main diagonal."""
    axes = [np.linspace(lo[k], hi[k], n) for k in range(3)]
    Z, Y, X = np.meshgrid(axes[2], axes[1], axes[0], indexing="ij")
    verts = np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1)

    def idx(i, j, k):
        return (k * n + j) * n + i

    i, j, k = np.meshgrid(np.arange(n - 1), np.arange(n - 1), np.arange(n - 1), indexing="ij")
    i, j, k = i.ravel(), j.ravel(), k.ravel()
    tets = []
    for perm in permutations(range(3)):
        off = np.zeros(3, dtype=int)
        path = [idx(i, j, k)]
        for axis in perm:
            off[axis] += 1
            path.append(idx(i + off[0], j + off[1], k + off[2]))
        tets.append(np.stack(path, axis=1))
    return SimplicialMesh(verts, _orient(verts, np.concatenate(tets)))


def horseshoe_map(xi: np.ndarray, R: float = 4.5) -> np.ndarray:
    s, e = xi[:, 0], xi[:, 1]
    return np.stack([-(1 + e) * np.cos(np.pi * s), (1 + (2 * R - 1) * e) * np.sin(np.pi * s)], axis=1)


def perturb_interior(mesh: SimplicialMesh, amount: float, h: float, seed: int) -> SimplicialMesh:
    """Uniform perturbation in [-amount*h, amount*h]^d of every interior vertex."""
    rng = np.random.default_rng(seed)
    v = mesh.vertices.copy()
    interior = np.setdiff1d(np.arange(mesh.n_vertices), mesh.boundary_vertices())
    v[interior] += rng.uniform(-amount * h, amount * h, size=(len(interior), mesh.dim))
    return mesh.with_vertices(v)


def random_mesh(dim: int, n: int, seed: int, jitter: float = 0.25) -> SimplicialMesh:
    """Structured mesh with every vertex jittered by up to ``jitter`` times the spacing."""
    if dim == 1:
        m = interval_mesh(n)
        h = 1.0 / (n - 1)
    elif dim == 2:
        m = criss_cross(n)
        h = 1.0 / (n - 1)
    else:
        m = tet_grid(n, (0, 0, 0), (1, 1, 1))
        h = 1.0 / (n - 1)
    rng = np.random.default_rng(seed)
    v = m.vertices + rng.uniform(-jitter * h / 2, jitter * h / 2, size=m.vertices.shape)
    return m.with_vertices(v)


def horseshoe_mesh(n: int, R: float = 4.5) -> tuple[SimplicialMesh, SimplicialMesh]:
    """(computational, physical) pair for the horseshoe domain.

    Grid vertices go through ``horseshoe_map``; each physical cell center is
    the mean of its four mapped corners. Mapping the centers too tangles
    the 3x3 and 5x5 meshes, because the outer chords cut inside them.
    """
    ref = criss_cross(n)
    v = horseshoe_map(ref.vertices, R)
    i, j = np.meshgrid(np.arange(n - 1), np.arange(n - 1))
    a = (j * n + i).ravel()
    v[n * n:] = 0.25 * (v[a] + v[a + 1] + v[a + n] + v[a + n + 1])
    return ref, ref.with_vertices(v)
