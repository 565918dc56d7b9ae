"""Triangle-style .node/.ele files, nodal data files, legacy VTK output and run manifests.

Boundary markers in .node files: 0 interior, 1 fixed, 2 + k sliding on constraint k.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import IndexOutOfRange, ParseError
from .mesh import FIXED, INTERIOR, SLIDING, BoundaryTags, SimplicialMesh


def _base(path) -> Path:
    p = Path(path)
    return p.with_suffix("") if p.suffix in (".node", ".ele") else p


def _lines(path: Path):
    """Yield (line number, tokens) for non-empty, non-comment lines."""
    with open(path) as fh:
        for no, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if line:
                yield no, line.split()


def _ints(path, no, toks, n=None):
    try:
        vals = [int(t) for t in toks]
    except ValueError:
        raise ParseError(path, no, f"expected integers, got {' '.join(toks)!r}") from None
    if n is not None and len(vals) < n:
        raise ParseError(path, no, f"expected at least {n} integers")
    return vals


def read_mesh(path) -> SimplicialMesh:
    base = _base(path)
    node, ele = base.with_suffix(".node"), base.with_suffix(".ele")

    it = _lines(node)
    try:
        no, toks = next(it)
    except StopIteration:
        raise ParseError(node, 1, "empty file") from None
    nv, dim, nattr, has_marker = _ints(node, no, toks, 4)[:4]
    if dim not in (1, 2, 3) or nv < 0:
        raise ParseError(node, no, f"bad header {' '.join(toks)!r}")
    verts = np.empty((nv, dim))
    markers = np.zeros(nv, dtype=int)
    first = None
    for k in range(nv):
        try:
            no, toks = next(it)
        except StopIteration:
            raise ParseError(node, no + 1, f"expected {nv} vertices, found {k}") from None
        want = 1 + dim + nattr + (1 if has_marker else 0)
        if len(toks) < want:
            raise ParseError(node, no, f"expected {want} fields")
        try:
            idx = int(toks[0])
            verts[k] = [float(t) for t in toks[1:1 + dim]]
            if has_marker:
                markers[k] = int(toks[1 + dim + nattr])
        except ValueError:
            raise ParseError(node, no, "malformed vertex line") from None
        if first is None:
            first = idx
    offset = 0 if first == 0 else 1

    it = _lines(ele)
    try:
        no, toks = next(it)
    except StopIteration:
        raise ParseError(ele, 1, "empty file") from None
    ne, per, *_ = _ints(ele, no, toks, 2)
    if per != dim + 1:
        raise ParseError(ele, no, f"{per} vertices per element does not match dimension {dim}")
    elems = np.empty((ne, per), dtype=np.int64)
    for k in range(ne):
        try:
            no, toks = next(it)
        except StopIteration:
            raise ParseError(ele, no + 1, f"expected {ne} elements, found {k}") from None
        vals = _ints(ele, no, toks, 1 + per)
        elems[k] = np.array(vals[1:1 + per]) - offset
        if elems[k].min() < 0 or elems[k].max() >= nv:
            raise IndexOutOfRange(f"{ele}:{no}: vertex index out of range")

    kind = np.where(markers == 0, INTERIOR, np.where(markers == 1, FIXED, SLIDING)).astype(np.int8)
    cid = np.where(markers >= 2, markers - 2, -1)
    return SimplicialMesh(verts, elems, BoundaryTags(kind, cid))


def write_mesh(mesh: SimplicialMesh, path) -> Path:
    base = _base(path)
    base.parent.mkdir(parents=True, exist_ok=True)
    tags = mesh.tags
    marker = np.where(tags.kind == SLIDING, tags.constraint + 2, np.where(tags.kind == FIXED, 1, 0))
    with open(base.with_suffix(".node"), "w") as fh:
        fh.write(f"{mesh.n_vertices} {mesh.dim} 0 1\n")
        for i, (p, m) in enumerate(zip(mesh.vertices, marker), 1):
            fh.write(f"{i} " + " ".join(repr(float(c)) for c in p) + f" {m}\n")
    with open(base.with_suffix(".ele"), "w") as fh:
        fh.write(f"{mesh.n_elements} {mesh.dim + 1} 0\n")
        for i, e in enumerate(mesh.elements + 1, 1):
            fh.write(f"{i} " + " ".join(str(int(v)) for v in e) + "\n")
    return base


def read_nodal(path) -> np.ndarray:
    """Nodal data file: header "<Nv> <ncomp>", then "<index> v1 .. vncomp" lines."""
    path = Path(path)
    it = _lines(path)
    try:
        no, toks = next(it)
    except StopIteration:
        raise ParseError(path, 1, "empty file") from None
    n, ncomp = _ints(path, no, toks, 2)[:2]
    out = np.empty((n, ncomp))
    for k in range(n):
        try:
            no, toks = next(it)
            out[k] = [float(t) for t in toks[1:1 + ncomp]]
        except StopIteration:
            raise ParseError(path, no + 1, f"expected {n} rows, found {k}") from None
        except ValueError:
            raise ParseError(path, no, "malformed data line") from None
    return out


def write_nodal(values, path) -> None:
    v = np.asarray(values, dtype=float)
    v = v.reshape(len(v), -1)
    with open(path, "w") as fh:
        fh.write(f"{v.shape[0]} {v.shape[1]}\n")
        for i, row in enumerate(v, 1):
            fh.write(f"{i} " + " ".join(repr(float(c)) for c in row) + "\n")


def read_metric(path, elements) -> "MetricField":
    from .metric import MetricField

    raw = read_nodal(path)
    d = int(round(np.sqrt(raw.shape[1])))
    return MetricField(raw.reshape(-1, d, d), elements)


def write_metric(field, path) -> None:
    write_nodal(field.tensors.reshape(len(field.tensors), -1), path)


VTK_CELL = {1: 3, 2: 5, 3: 10}


def write_vtk(mesh: SimplicialMesh, path, field=None, scalars: dict | None = None) -> Path:
    """Legacy ASCII unstructured grid with optional point data.

    With a metric ``field`` a ``metric_det_root`` array holds det(M)^(1/d).
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pts = np.zeros((mesh.n_vertices, 3))
    pts[:, : mesh.dim] = mesh.vertices
    k = mesh.dim + 1
    data = dict(scalars or {})
    if field is not None:
        data = {"metric_det_root": np.linalg.det(field.tensors) ** (1.0 / mesh.dim), **data}
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\nmeshflow\nASCII\nDATASET UNSTRUCTURED_GRID\n")
        fh.write(f"POINTS {mesh.n_vertices} double\n")
        for p in pts:
            fh.write(" ".join(repr(float(c)) for c in p) + "\n")
        fh.write(f"CELLS {mesh.n_elements} {mesh.n_elements * (k + 1)}\n")
        for e in mesh.elements:
            fh.write(f"{k} " + " ".join(str(int(v)) for v in e) + "\n")
        fh.write(f"CELL_TYPES {mesh.n_elements}\n")
        fh.write("\n".join([str(VTK_CELL[mesh.dim])] * mesh.n_elements) + "\n")
        if data:
            fh.write(f"POINT_DATA {mesh.n_vertices}\n")
            for name, vals in data.items():
                vals = np.asarray(vals, dtype=float)
                fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
                fh.write("\n".join(repr(float(v)) for v in vals) + "\n")
    return path


@dataclass
class RunManifest:
    command: str
    functional: str = "huang"
    theta: float = 1.0 / 3.0
    p: float = 2.0
    tau: float = 0.1
    t_span: list = field(default_factory=lambda: [0.0, 1.0])
    formulation: str = "xi"
    metric: str = "identity"
    mesh_paths: dict = field(default_factory=dict)
    boundary: str = "fixed"
    cycles: int = 1
    seed: int = 0
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunManifest":
        return cls(**json.loads(text))

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json())
        return path

    @classmethod
    def load(cls, path) -> "RunManifest":
        return cls.from_json(Path(path).read_text())


class JsonlWriter:
    """Appends one JSON object per line; usable as an integrator step callback."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.fh = open(self.path, "w")

    def __call__(self, row: dict) -> None:
        self.fh.write(json.dumps({k: (float(v) if isinstance(v, np.floating) else v)
                                  for k, v in row.items()}) + "\n")

    def close(self) -> None:
        self.fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
