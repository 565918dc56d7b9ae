"""Simplicial meshes: edge matrices, volumes, patches and boundary tags.

Elements store their vertices in file order; local vertex 0 is the base of
the edge matrix, so column ``j`` of ``E_K`` is ``v_{j+1} - v_0``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import factorial
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .errors import DegenerateElement, IndexOutOfRange, UnresolvedVertex

INTERIOR = 0
FIXED = 1
SLIDING = 2

DEGENERACY_FACTOR = 1e-14


# --------------------------------------------------------------------------
# batched geometry kernels


def edge_matrices(coords: np.ndarray, elements: np.ndarray) -> np.ndarray:
    """Stack of edge matrices, shape (Ne, d, d); column j is v_{j+1} - v_0."""
    v = coords[elements]  # (Ne, d+1, d)
    return np.swapaxes(v[:, 1:, :] - v[:, :1, :], 1, 2)


def simplex_volumes(dets: np.ndarray, d: int) -> np.ndarray:
    return np.abs(dets) / factorial(d)


def degeneracy_floor(coords: np.ndarray) -> float:
    d = coords.shape[1]
    diam = float(np.linalg.norm(coords.max(axis=0) - coords.min(axis=0)))
    return DEGENERACY_FACTOR * max(diam, 1e-300) ** d


# --------------------------------------------------------------------------
# boundary description


@dataclass(frozen=True)
class Constraint:
    """Implicit boundary piece ``phi(p) = 0`` with analytic gradient.

    Both callables take an (n, d) array of points and return (n,) and (n, d).
    """

    phi: Callable[[np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray], np.ndarray]
    name: str = ""


def plane_constraint(normal: Sequence[float], offset: float, name: str = "") -> Constraint:
    """The hyperplane ``normal . p = offset``."""
    n = np.asarray(normal, dtype=float)

    def phi(p):
        return np.atleast_2d(p) @ n - offset

    def grad(p):
        return np.broadcast_to(n, np.atleast_2d(p).shape).copy()

    return Constraint(phi, grad, name or f"plane{tuple(n)}={offset}")


def box_constraints(lo: Sequence[float], hi: Sequence[float]) -> list[Constraint]:
    """Faces of an axis-aligned box, ordered (x=lo, x=hi, y=lo, y=hi, ...)."""
    out = []
    for axis, (a, b) in enumerate(zip(lo, hi)):
        e = np.zeros(len(lo))
        e[axis] = 1.0
        out.append(plane_constraint(e, a, f"x{axis}={a}"))
        out.append(plane_constraint(e, b, f"x{axis}={b}"))
    return out


@dataclass
class BoundaryGeometry:
    """Either every boundary vertex is fixed, or boundary vertices slide on
    the supplied constraints. Vertices lying on two or more constraints
    (corners, box edges) are fixed."""

    constraints: list[Constraint] | None = None
    tol: float = 1e-9

    @classmethod
    def all_fixed(cls) -> "BoundaryGeometry":
        return cls(None)

    @property
    def mode(self) -> str:
        return "fixed" if self.constraints is None else "sliding"


@dataclass
class BoundaryTags:
    kind: np.ndarray  # (Nv,) int8: INTERIOR | FIXED | SLIDING
    constraint: np.ndarray  # (Nv,) int, constraint id for SLIDING, else -1

    @classmethod
    def interior(cls, nv: int) -> "BoundaryTags":
        return cls(np.zeros(nv, dtype=np.int8), -np.ones(nv, dtype=int))

    @property
    def fixed(self) -> np.ndarray:
        return np.flatnonzero(self.kind == FIXED)

    @property
    def sliding(self) -> np.ndarray:
        return np.flatnonzero(self.kind == SLIDING)

    def copy(self) -> "BoundaryTags":
        return BoundaryTags(self.kind.copy(), self.constraint.copy())


# --------------------------------------------------------------------------
# mesh


@dataclass
class SimplicialMesh:
    vertices: np.ndarray
    elements: np.ndarray
    tags: BoundaryTags | None = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=float)
        self.elements = np.ascontiguousarray(self.elements, dtype=np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] not in (1, 2, 3):
            raise ValueError(f"vertices must be (Nv, d) with d in 1..3, got {self.vertices.shape}")
        d = self.vertices.shape[1]
        if self.elements.ndim != 2 or self.elements.shape[1] != d + 1:
            raise ValueError(f"elements must be (Ne, {d + 1}), got {self.elements.shape}")
        nv = len(self.vertices)
        if self.elements.size and (self.elements.min() < 0 or self.elements.max() >= nv):
            raise IndexOutOfRange(f"element references vertex outside 0..{nv - 1}")
        s = np.sort(self.elements, axis=1)
        dup = np.flatnonzero((s[:, 1:] == s[:, :-1]).any(axis=1))
        if dup.size:
            raise ValueError(f"element {dup[0]} repeats a vertex")
        if self.tags is None:
            self.tags = BoundaryTags.interior(nv)

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    def with_vertices(self, coords: np.ndarray) -> "SimplicialMesh":
        """Same connectivity and tags, new coordinates."""
        return SimplicialMesh(np.array(coords, dtype=float), self.elements, self.tags.copy())

    def edge_matrices(self) -> np.ndarray:
        return edge_matrices(self.vertices, self.elements)

    def signed_dets(self) -> np.ndarray:
        return np.linalg.det(self.edge_matrices())

    def volumes(self) -> np.ndarray:
        return simplex_volumes(self.signed_dets(), self.dim)

    def centers(self) -> np.ndarray:
        return self.vertices[self.elements].mean(axis=1)

    @property
    def degeneracy_floor(self) -> float:
        return degeneracy_floor(self.vertices)

    def check_nondegenerate(self) -> np.ndarray:
        dets = self.signed_dets()
        floor = self.degeneracy_floor
        bad = np.flatnonzero(np.abs(dets) < floor)
        if bad.size:
            raise DegenerateElement(bad[0], dets[bad[0]], floor)
        return dets

    def is_oriented(self) -> bool:
        return bool(np.all(self.signed_dets() > 0))

    def bbox_diameter(self) -> float:
        return float(np.linalg.norm(self.vertices.max(axis=0) - self.vertices.min(axis=0)))

    # topology (cached; connectivity never changes)

    def facets(self):
        """All element facets: (sorted vertex tuples (Ne*(d+1), d), owner element, opposite local vertex)."""
        if "facets" not in self._cache:
            d = self.dim
            ne = self.n_elements
            loc = [[j for j in range(d + 1) if j != i] for i in range(d + 1)]
            f = self.elements[:, loc]  # (Ne, d+1, d); facet i is opposite vertex i
            f = np.sort(f.reshape(-1, d), axis=1)
            owner = np.repeat(np.arange(ne), d + 1)
            opp = np.tile(np.arange(d + 1), ne)
            self._cache["facets"] = (f, owner, opp)
        return self._cache["facets"]

    def boundary_facets(self) -> np.ndarray:
        """Facets belonging to exactly one element, as (nb, d) vertex arrays."""
        if "bfacets" not in self._cache:
            f, owner, opp = self.facets()
            _, inv, counts = np.unique(f, axis=0, return_inverse=True, return_counts=True)
            inv = inv.ravel()
            mask = counts[inv] == 1
            self._cache["bfacets"] = f[mask]
            self._cache["bfacet_owner"] = owner[mask]
        return self._cache["bfacets"]

    def boundary_vertices(self) -> np.ndarray:
        return np.unique(self.boundary_facets())

    def neighbors(self) -> np.ndarray:
        """(Ne, d+1) element across the facet opposite each local vertex, -1 on the boundary."""
        if "neighbors" not in self._cache:
            f, owner, opp = self.facets()
            _, inv = np.unique(f, axis=0, return_inverse=True)
            inv = inv.ravel()
            order = np.argsort(inv, kind="stable")
            nb = -np.ones((self.n_elements, self.dim + 1), dtype=np.int64)
            si = inv[order]
            same = np.flatnonzero(si[1:] == si[:-1])
            a, b = order[same], order[same + 1]
            nb[owner[a], opp[a]] = owner[b]
            nb[owner[b], opp[b]] = owner[a]
            self._cache["neighbors"] = nb
        return self._cache["neighbors"]

    def vertex_neighbors(self) -> list[np.ndarray]:
        """Vertices sharing an element with each vertex (excluding itself)."""
        if "vnb" not in self._cache:
            nv = self.n_vertices
            e = self.elements
            k = e.shape[1]
            rows = np.repeat(e, k, axis=1).ravel()
            cols = np.tile(e, (1, k)).ravel()
            keep = rows != cols
            rows, cols = rows[keep], cols[keep]
            pairs = np.unique(np.stack([rows, cols], axis=1), axis=0)
            split = np.searchsorted(pairs[:, 0], np.arange(1, nv))
            self._cache["vnb"] = np.split(pairs[:, 1], split)
        return self._cache["vnb"]


# --------------------------------------------------------------------------
# single-element operations


class EdgeMatrix(NamedTuple):
    matrix: np.ndarray
    inverse: np.ndarray
    det: float

    @classmethod
    def from_matrix(cls, E, floor: float = 0.0, element: int = -1) -> "EdgeMatrix":
        E = np.array(E, dtype=float)
        det = float(np.linalg.det(E))
        if not abs(det) > floor:
            raise DegenerateElement(element, det, floor)
        return cls(E, np.linalg.inv(E), det)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]


def edge_matrix(mesh: SimplicialMesh, k: int) -> EdgeMatrix:
    if not 0 <= k < mesh.n_elements:
        raise IndexOutOfRange(f"element {k} not in 0..{mesh.n_elements - 1}")
    E = edge_matrices(mesh.vertices, mesh.elements[k : k + 1])[0]
    return EdgeMatrix.from_matrix(E, mesh.degeneracy_floor, k)


def element_volume(E: EdgeMatrix) -> float:
    return abs(E.det) / factorial(E.dim)


def affine_jacobian(E: EdgeMatrix, Ehat: EdgeMatrix):
    """Jacobian of the affine map K_c -> K, its inverse, and det of the inverse."""
    F = E.matrix @ Ehat.inverse
    Finv = Ehat.matrix @ E.inverse
    return F, Finv, Ehat.det / E.det


# --------------------------------------------------------------------------
# patches


@dataclass(frozen=True)
class VertexPatch:
    vertex: int
    entries: tuple  # ((element, local index), ...)

    def __len__(self) -> int:
        return len(self.entries)


def build_patches(mesh: SimplicialMesh) -> list[VertexPatch]:
    nv, k = mesh.n_vertices, mesh.dim + 1
    flat = mesh.elements.ravel()
    order = np.argsort(flat, kind="stable")
    elem = order // k
    loc = order % k
    bounds = np.searchsorted(flat[order], np.arange(nv + 1))
    return [
        VertexPatch(i, tuple(zip(elem[bounds[i]:bounds[i + 1]].tolist(), loc[bounds[i]:bounds[i + 1]].tolist())))
        for i in range(nv)
    ]


def assemble_rows(elements: np.ndarray, rows: np.ndarray, nv: int) -> np.ndarray:
    """Sum per-element vertex rows (Ne, d+1, d) into (Nv, d).

    bincount accumulates in index order, so the result does not depend on
    how the element rows were produced.
    """
    d = rows.shape[-1]
    idx = elements.ravel()
    flat = rows.reshape(-1, d)
    return np.stack([np.bincount(idx, weights=flat[:, c], minlength=nv) for c in range(d)], axis=1)


# --------------------------------------------------------------------------
# boundary classification


def classify_boundary(mesh: SimplicialMesh, geometry: BoundaryGeometry) -> BoundaryTags:
    nv = mesh.n_vertices
    tags = BoundaryTags.interior(nv)
    bverts = mesh.boundary_vertices()
    if geometry.constraints is None:
        tags.kind[bverts] = FIXED
        return tags
    if not bverts.size:
        return tags
    pts = mesh.vertices[bverts]
    scale = max(mesh.bbox_diameter(), 1.0)
    hits = np.stack([np.abs(c.phi(pts)) <= geometry.tol * scale for c in geometry.constraints], axis=1)
    nhit = hits.sum(axis=1)
    for v, n, h, p in zip(bverts, nhit, hits, pts):
        if n == 0:
            raise UnresolvedVertex(v, p)
        if n == 1:
            tags.kind[v] = SLIDING
            tags.constraint[v] = int(np.flatnonzero(h)[0])
        else:
            tags.kind[v] = FIXED
    return tags


def constrain_velocity(vel: np.ndarray, coords: np.ndarray, tags: BoundaryTags,
                       constraints: Sequence[Constraint] | None) -> np.ndarray:
    """Zero fixed rows and remove the normal component of sliding rows (in place)."""
    vel[tags.kind == FIXED] = 0.0
    sl = tags.sliding
    if sl.size and constraints:
        for cid in np.unique(tags.constraint[sl]):
            idx = sl[tags.constraint[sl] == cid]
            g = constraints[cid].grad(coords[idx])
            n = g / np.linalg.norm(g, axis=1, keepdims=True)
            vel[idx] -= np.sum(vel[idx] * n, axis=1, keepdims=True) * n
    return vel


def project_sliding(coords: np.ndarray, tags: BoundaryTags,
                    constraints: Sequence[Constraint] | None) -> np.ndarray:
    """One Newton step along grad(phi) putting sliding vertices back on phi = 0 (in place)."""
    sl = tags.sliding
    if sl.size and constraints:
        for cid in np.unique(tags.constraint[sl]):
            idx = sl[tags.constraint[sl] == cid]
            c = constraints[cid]
            p = coords[idx]
            g = c.grad(p)
            coords[idx] = p - (c.phi(p) / np.sum(g * g, axis=1))[:, None] * g
    return coords


# --------------------------------------------------------------------------
# the three meshes of the method


@dataclass
class MeshTriple:
    """Reference computational, current computational and physical meshes.

    Connectivity and boundary tags are stored once and shared.
    """

    elements: np.ndarray
    reference: np.ndarray
    computational: np.ndarray
    physical: np.ndarray
    tags: BoundaryTags

    @classmethod
    def from_meshes(cls, reference: SimplicialMesh, physical: SimplicialMesh,
                    computational: SimplicialMesh | None = None) -> "MeshTriple":
        if not np.array_equal(reference.elements, physical.elements):
            raise ValueError("reference and physical meshes must share connectivity")
        comp = reference.vertices if computational is None else computational.vertices
        return cls(reference.elements, reference.vertices.copy(), np.array(comp, dtype=float),
                   physical.vertices.copy(), reference.tags.copy())

    @property
    def dim(self) -> int:
        return self.physical.shape[1]

    def mesh(self, role: str) -> SimplicialMesh:
        coords = {"reference": self.reference, "computational": self.computational,
                  "physical": self.physical}[role]
        return SimplicialMesh(coords, self.elements, self.tags)
