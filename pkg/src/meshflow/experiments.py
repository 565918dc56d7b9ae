"""End-to-end experiment drivers: smoothing, sine wave, horseshoe, nine spheres,
timing sweep and gradient certification."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import FoldedElement, MinStepReached
from .functionals import FunctionalSpec
from .gradient_x import element_grads_x
from .gradient_xi import XiEnergy
from .mesh import (BoundaryGeometry, Constraint, MeshTriple, SimplicialMesh, box_constraints,
                   classify_boundary, edge_matrices, plane_constraint, simplex_volumes)
from .meshgen import criss_cross, horseshoe_mesh, perturb_interior, random_mesh, tet_grid
from .metric import (MetricField, analytic_source, build_hessian_metric, hessian_source,
                     horseshoe_metric, identity_source)
from .oracle import DEFAULT_SEED, FD_STEP, fd_gradient, relative_error
from .solver import AdaptResult, IntegratorConfig, adapt, integrate, phi_h_interpolate

R_HORSESHOE = 4.5


def sine_wave_u(x: np.ndarray) -> np.ndarray:
    return np.tanh(-30.0 * (x[:, 1] - 0.5 - 0.25 * np.sin(2 * np.pi * x[:, 0])))


SPHERE_CENTERS = np.array([[0.0, 0.0, 0.0]] + [[sx * 0.5, sy * 0.5, sz * 0.5]
                                                for sz in (1, -1) for sx in (1, -1) for sy in (1, -1)])


def nine_spheres_u(x: np.ndarray) -> np.ndarray:
    r2 = ((x[:, None, :] - SPHERE_CENTERS[None]) ** 2).sum(axis=-1)
    return np.tanh(30.0 * (r2 - 0.1875)).sum(axis=1)


def horseshoe_constraints(R: float = R_HORSESHOE) -> list[Constraint]:
    """Inner circle, outer ellipse and the x2 = 0 base of the horseshoe."""
    inner = Constraint(lambda p: p[:, 0] ** 2 + p[:, 1] ** 2 - 1.0,
                       lambda p: 2.0 * p, "inner")
    a, b = 2.0, 2.0 * R
    outer = Constraint(lambda p: (p[:, 0] / a) ** 2 + (p[:, 1] / b) ** 2 - 1.0,
                       lambda p: np.stack([2 * p[:, 0] / a**2, 2 * p[:, 1] / b**2], axis=1), "outer")
    return [inner, outer, plane_constraint([0.0, 1.0], 0.0, "base")]


def _box_of(mesh: SimplicialMesh) -> list[Constraint]:
    return box_constraints(mesh.vertices.min(axis=0), mesh.vertices.max(axis=0))


def make_triple(reference: SimplicialMesh, physical: SimplicialMesh, boundary: str = "fixed",
                formulation: str = "xi",
                physical_constraints: list[Constraint] | None = None):
    """Tag the boundary in the space that moves and bundle the three meshes.

    Returns (triple, constraints). Sliding constraints default to the
    bounding box faces of the moving mesh.
    """
    if boundary == "fixed":
        geom = BoundaryGeometry.all_fixed()
        tags = classify_boundary(reference, geom)
        constraints = None
    elif boundary == "sliding":
        if formulation == "xi":
            constraints = _box_of(reference)
            tags = classify_boundary(reference, BoundaryGeometry(constraints))
        else:
            constraints = physical_constraints or _box_of(physical)
            tags = classify_boundary(physical, BoundaryGeometry(constraints))
    else:
        raise ValueError(f"unknown boundary mode {boundary!r}")
    reference = SimplicialMesh(reference.vertices, reference.elements, tags)
    physical = SimplicialMesh(physical.vertices, physical.elements, tags.copy())
    return MeshTriple.from_meshes(reference, physical), constraints


@dataclass
class ExperimentResult:
    name: str
    reference: SimplicialMesh
    initial: SimplicialMesh
    final: SimplicialMesh | None
    adapt: AdaptResult | None
    field: MetricField | None
    folded: bool = False
    fold_info: str = ""
    summary: dict = field(default_factory=dict)

    @property
    def trajectory(self) -> list:
        if self.adapt is None:
            return []
        return [row for r in self.adapt.integrations for row in r.trajectory]


def run_experiment(name, reference, physical, spec, config, source, boundary, cycles, log_step,
         physical_constraints=None) -> ExperimentResult:
    triple, constraints = make_triple(reference, physical, boundary, config.formulation,
                                      physical_constraints)
    initial = triple.mesh("physical")
    try:
        res = adapt(triple, spec, config, source, constraints, cycles, log_step)
    except (MinStepReached, FoldedElement) as exc:
        return ExperimentResult(name, triple.mesh("reference"), initial, None, None, None,
                                folded=True, fold_info=str(exc),
                                summary={"folded": True, "reason": str(exc)})
    final = res.physical
    dets = final.signed_dets()
    folded = not (np.all(dets > 0) or np.all(dets < 0))
    traj = [row for r in res.integrations for row in r.trajectory]
    summary = {
        "folded": folded,
        "steps": sum(r.steps for r in res.integrations),
        "rejections": sum(r.rejections for r in res.integrations),
        "energy_violations": sum(r.energy_violations for r in res.integrations),
        "final_energy": res.integrations[-1].energy,
        "final_grad_norm": res.integrations[-1].grad_norm,
        "min_volume_final": float(final.volumes().min()),
        "I_h": [row["I_h"] for row in traj],
        "min_volume": [row["min_volume"] for row in traj],
    }
    return ExperimentResult(name, triple.mesh("reference"), initial, final, res, res.field,
                            folded=folded, fold_info="final mesh folded" if folded else "",
                            summary=summary)


def smoothing(n: int = 11, perturb: float = 0.3, seed: int = 7,
              spec: FunctionalSpec | None = None, config: IntegratorConfig | None = None,
              boundary: str = "fixed", cycles: int = 1, log_step=None) -> ExperimentResult:
    """Recover a uniform criss-cross mesh from a randomly perturbed copy with M = I."""
    spec = spec or FunctionalSpec()
    config = config or IntegratorConfig()
    ref = criss_cross(n)
    h = 1.0 / (n - 1)
    phys = perturb_interior(ref, perturb, h, seed)
    out = run_experiment("smoothing", ref, phys, spec, config, identity_source, boundary, cycles, log_step)
    if out.final is not None:
        out.summary["max_distance_over_h"] = float(
            np.linalg.norm(out.final.vertices - ref.vertices, axis=1).max() / h)
        out.summary["initial_distance_over_h"] = float(
            np.linalg.norm(phys.vertices - ref.vertices, axis=1).max() / h)
    return out


def sine_wave(n: int = 31, spec: FunctionalSpec | None = None,
              config: IntegratorConfig | None = None, boundary: str = "fixed",
              cycles: int = 1, log_step=None) -> ExperimentResult:
    spec = spec or FunctionalSpec()
    config = config or IntegratorConfig()
    ref = criss_cross(n)
    return run_experiment("sine", ref, ref, spec, config, hessian_source(sine_wave_u), boundary, cycles, log_step)


def horseshoe(n: int = 21, metric: str = "identity", spec: FunctionalSpec | None = None,
              config: IntegratorConfig | None = None, boundary: str = "fixed",
              cycles: int = 1, log_step=None) -> ExperimentResult:
    spec = spec or FunctionalSpec()
    config = config or IntegratorConfig()
    ref, phys = horseshoe_mesh(n, R_HORSESHOE)
    if metric == "identity":
        source = identity_source
    elif metric in ("horseshoe", "adaptive"):
        source = analytic_source(horseshoe_metric(R_HORSESHOE))
    else:
        raise ValueError(f"unknown horseshoe metric {metric!r}")
    return run_experiment("horseshoe", ref, phys, spec, config, source, boundary, cycles, log_step,
                horseshoe_constraints(R_HORSESHOE))


def nine_spheres(n: int = 9, spec: FunctionalSpec | None = None,
                 config: IntegratorConfig | None = None, boundary: str = "fixed",
                 cycles: int = 1, log_step=None) -> ExperimentResult:
    spec = spec or FunctionalSpec()
    config = config or IntegratorConfig()
    ref = tet_grid(n)
    return run_experiment("spheres", ref, ref, spec, config, hessian_source(nine_spheres_u), boundary,
                cycles, log_step)


EXAMPLES: dict[str, Callable] = {
    "smoothing": smoothing,
    "sine": sine_wave,
    "horseshoe": horseshoe,
    "spheres": nine_spheres,
}


def time_integrate(n: int, spec: FunctionalSpec | None = None,
                   config: IntegratorConfig | None = None) -> dict:
    """Wall time of one integrate() call for the sine-wave setup on an n x n grid."""
    spec = spec or FunctionalSpec()
    config = config or IntegratorConfig()
    ref = criss_cross(n)
    triple, constraints = make_triple(ref, ref, "fixed")
    fld = build_hessian_metric(ref, sine_wave_u(ref.vertices))
    t0 = time.perf_counter()
    r = integrate(config, triple, fld, spec, constraints)
    wall = time.perf_counter() - t0
    return {"n": n, "n_vertices": ref.n_vertices, "seconds": wall, "steps": r.steps,
            "rejections": r.rejections, "energy_violations": r.energy_violations,
            "energies": list(map(float, r.energies)),
            "seconds_per_1000_vertices": 1000 * wall / ref.n_vertices}


# --------------------------------------------------------------------------
# gradient certification


def random_spd_field(mesh: SimplicialMesh, rng, spread: float = 0.5) -> MetricField:
    d = mesh.dim
    A = rng.standard_normal((mesh.n_vertices, d, d)) * spread
    t = A @ np.swapaxes(A, 1, 2) + np.eye(d)
    return MetricField(t, mesh.elements)


def random_triple(dim: int, n: int, seed: int):
    """Jittered structured physical and computational meshes plus a random SPD field."""
    rng = np.random.default_rng(seed)
    phys = random_mesh(dim, n, seed)
    comp = random_mesh(dim, n, seed + 1000)
    triple = MeshTriple(phys.elements, comp.vertices.copy(), comp.vertices.copy(),
                        phys.vertices.copy(), phys.tags.copy())
    return triple, random_spd_field(phys, rng)


def gradcheck_xi(spec: FunctionalSpec, dim: int, n: int, seed: int = DEFAULT_SEED) -> float:
    """Max-norm relative error of the assembled xi-gradient against central
    differences of I_h."""
    triple, fld = random_triple(dim, n, seed)
    en = XiEnergy(spec, triple.elements, triple.physical, fld)
    analytic = en.gradient(triple.computational)
    fd = fd_gradient(en.value, triple.computational)
    return relative_error(analytic, fd)


def frozen_linear_metric(X0: np.ndarray, nodal: np.ndarray):
    """Per-element linear metric fields fixed in space.

    ``X0`` (Ne, d+1, d) are the element vertices where the ``nodal`` tensors
    (Ne, d+1, d, d) were sampled. The returned function maps points (Ne, d)
    to tensors (Ne, d, d); moving the vertices afterwards does not move the
    field, so the barycenter samples a different tensor.
    """
    Einv = np.linalg.inv(np.swapaxes(X0[:, 1:] - X0[:, :1], 1, 2))

    def at(p):
        lam = np.einsum("eij,ej->ei", Einv, p - X0[:, 0])
        lam = np.concatenate([1.0 - lam.sum(axis=1, keepdims=True), lam], axis=1)
        return np.einsum("ej,ejab->eab", lam, nodal)

    return at


def element_energies_x(spec: FunctionalSpec, X: np.ndarray, Ehat: np.ndarray, metric_at) -> np.ndarray:
    """|K| I_K for every element as a function of its physical vertices X (Ne, d+1, d)."""
    from .functionals import eval_G

    d = X.shape[-1]
    E = np.swapaxes(X[:, 1:] - X[:, :1], 1, 2)
    detE = np.linalg.det(E)
    J = Ehat @ np.linalg.inv(E)
    r = np.linalg.det(Ehat) / detE
    return simplex_volumes(detE, d) * eval_G(spec, J, r, metric_at(X.mean(axis=1)))


def gradcheck_x(spec: FunctionalSpec, dim: int, n: int, seed: int = DEFAULT_SEED,
                step: float = FD_STEP) -> float:
    """Worst per-element relative error of element_grads_x against central
    differences of |K| I_K, with a nonconstant metric field held fixed in
    space while each vertex coordinate is perturbed.

    The elements are independent, so one perturbed evaluation per local
    coordinate covers the whole mesh.
    """
    triple, fld = random_triple(dim, n, seed)
    X0 = triple.physical[triple.elements]
    Ehat = edge_matrices(triple.computational, triple.elements)
    nodal = fld.tensors[triple.elements]
    analytic = element_grads_x(spec, np.swapaxes(X0[:, 1:] - X0[:, :1], 1, 2), Ehat, nodal)
    at = frozen_linear_metric(X0, nodal)
    fd = np.empty_like(analytic)
    for j in range(dim + 1):
        for c in range(dim):
            h = step * np.maximum(1.0, np.abs(X0[:, j, c]))
            Xp, Xm = X0.copy(), X0.copy()
            Xp[:, j, c] += h
            Xm[:, j, c] -= h
            fd[:, j, c] = (element_energies_x(spec, Xp, Ehat, at)
                           - element_energies_x(spec, Xm, Ehat, at)) / (2 * h)
    diff = np.abs(analytic - fd).max(axis=(1, 2))
    scale = np.abs(fd).max(axis=(1, 2))
    return float((diff / np.where(scale > 0, scale, 1.0)).max())
