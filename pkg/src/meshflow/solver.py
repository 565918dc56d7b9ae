"""Gradient-flow integration of the mesh equation and mesh interpolation.

The flow moves vertex i with velocity -(P_i / tau) dI_h/d(vertex i),
modified on the boundary. Two state spaces are supported: computational
coordinates ("xi", physical mesh and metric frozen) and physical
coordinates ("x", computational mesh frozen, metric resampled between
steps).
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import sparse
from scipy.integrate import BDF

from .errors import FoldedElement, MaxStepsExceeded, MinStepReached, PointOutside
from .functionals import FunctionalSpec
from .gradient_x import XEnergy
from .gradient_xi import XiEnergy
from .mesh import (BoundaryTags, Constraint, MeshTriple, SimplicialMesh, constrain_velocity,
                   degeneracy_floor, edge_matrices, project_sliding)
from .metric import MetricField

log = logging.getLogger(__name__)

MetricSource = Callable[[SimplicialMesh], MetricField]


@dataclass
class IntegratorConfig:
    tau: float = 0.1
    t_span: tuple[float, float] = (0.0, 1.0)
    # "bdf" (variable-order implicit), "adaptive" (Bogacki-Shampine 3(2)) or "fixed" (explicit Euler)
    controller: str = "bdf"
    rtol: float = 1e-4
    atol: float = 1e-7
    dt: float | None = None  # fixed step, or initial step for the other controllers
    max_steps: int = 100_000
    min_step: float = 1e-12
    formulation: str = "xi"

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        t0, t1 = self.t_span
        if not t1 > t0:
            raise ValueError("t_span must be increasing")
        if not (self.rtol > 0 and self.atol > 0):
            raise ValueError("tolerances must be positive")
        if self.controller not in ("bdf", "adaptive", "fixed"):
            raise ValueError(f"unknown controller {self.controller!r}")
        if self.formulation not in ("xi", "x"):
            raise ValueError(f"unknown formulation {self.formulation!r}")


# --------------------------------------------------------------------------
# right-hand sides


class XiFlow:
    """Flow of the computational vertices for a frozen physical mesh and metric."""

    formulation = "xi"

    def __init__(self, spec: FunctionalSpec, triple: MeshTriple, field: MetricField,
                 constraints: Sequence[Constraint] | None = None, tau: float = 0.1):
        self.spec = spec
        self.tau = tau
        self.elements = triple.elements
        self.tags = triple.tags
        self.constraints = constraints
        self.energy = XiEnergy(spec, triple.elements, triple.physical, field)
        self.P = self.energy.P
        self.initial = triple.computational.copy()

    def gradient(self, y):
        return self.energy.gradient(y)

    def velocity(self, y: np.ndarray) -> np.ndarray:
        v = -(self.P / self.tau)[:, None] * self.gradient(y)
        return constrain_velocity(v, y, self.tags, self.constraints)

    def value(self, y) -> float:
        return self.energy.value(y)

    def after_step(self, y: np.ndarray, project: bool = True) -> np.ndarray:
        return project_sliding(y, self.tags, self.constraints) if project else y


class XFlow:
    """Flow of the physical vertices for a frozen computational mesh.

    Nodal metrics are held fixed within a step and resampled from
    ``metric_source`` after each accepted step (if given); otherwise they
    stay attached to their vertices.
    """

    formulation = "x"

    def __init__(self, spec: FunctionalSpec, triple: MeshTriple, field: MetricField,
                 constraints: Sequence[Constraint] | None = None, tau: float = 0.1,
                 metric_source: MetricSource | None = None):
        self.spec = spec
        self.tau = tau
        self.elements = triple.elements
        self.tags = triple.tags
        self.constraints = constraints
        self.energy = XEnergy(spec, triple.elements, triple.computational)
        self.metric_source = metric_source
        self.nodal = field.tensors
        self.P = self.energy.balancing(self.nodal)
        self.initial = triple.physical.copy()

    def gradient(self, y):
        return self.energy.gradient(y, self.nodal)

    def velocity(self, y: np.ndarray) -> np.ndarray:
        v = -(self.P / self.tau)[:, None] * self.gradient(y)
        return constrain_velocity(v, y, self.tags, self.constraints)

    def value(self, y) -> float:
        return self.energy.value(y, self.nodal)

    def after_step(self, y: np.ndarray, project: bool = True) -> np.ndarray:
        if project:
            y = project_sliding(y, self.tags, self.constraints)
        if self.metric_source is not None:
            self.nodal = self.metric_source(SimplicialMesh(y, self.elements, self.tags)).tensors
            self.P = self.energy.balancing(self.nodal)
        return y


def rhs_xi(state, triple: MeshTriple, field: MetricField, spec: FunctionalSpec,
           constraints: Sequence[Constraint] | None = None, tau: float = 0.1) -> np.ndarray:
    """d(xi)/dt for the given computational coordinates (flat or (Nv, d))."""
    y = np.asarray(state, dtype=float)
    v = XiFlow(spec, triple, field, constraints, tau).velocity(y.reshape(triple.physical.shape))
    return v.reshape(y.shape)


def rhs_x(state, triple: MeshTriple, field: MetricField, spec: FunctionalSpec,
          constraints: Sequence[Constraint] | None = None, tau: float = 0.1) -> np.ndarray:
    """d(x)/dt for the given physical coordinates (flat or (Nv, d))."""
    y = np.asarray(state, dtype=float)
    v = XFlow(spec, triple, field, constraints, tau).velocity(y.reshape(triple.physical.shape))
    return v.reshape(y.shape)


# --------------------------------------------------------------------------
# integration


@dataclass
class IntegrationResult:
    coords: np.ndarray
    t: float
    steps: int
    rejections: int
    fold_rejections: int
    grad_norm: float
    energy: float
    energy_violations: int
    trajectory: list = field(default_factory=list)

    @property
    def energies(self) -> np.ndarray:
        return np.array([r["I_h"] for r in self.trajectory])

    @property
    def min_volumes(self) -> np.ndarray:
        return np.array([r["min_volume"] for r in self.trajectory])


class _FoldCheck:
    def __init__(self, coords, elements):
        self.elements = elements
        self.d = coords.shape[1]
        dets = np.linalg.det(edge_matrices(coords, elements))
        sign = np.sign(dets)
        if not (np.all(sign > 0) or np.all(sign < 0)):
            raise FoldedElement(np.flatnonzero(sign != np.sign(dets.sum())),
                                "initial mesh is not uniformly oriented")
        self.sign = float(sign[0])
        self.floor = degeneracy_floor(coords)

    def min_volume(self, y) -> float:
        dets = self.sign * np.linalg.det(edge_matrices(y, self.elements))
        return float(dets.min()) / math.factorial(self.d)

    def folded(self, y) -> np.ndarray:
        dets = self.sign * np.linalg.det(edge_matrices(y, self.elements))
        return np.flatnonzero(~(dets > self.floor))


def _safe_velocity(flow, y):
    try:
        v = flow.velocity(y)
    except (FoldedElement, np.linalg.LinAlgError):
        return None
    if not np.all(np.isfinite(v)):
        return None
    return v


def _initial_step(flow, y, f0, span, rtol, atol):
    scale = atol + rtol * np.abs(y)
    d0 = np.sqrt(np.mean((y / scale) ** 2))
    d1 = np.sqrt(np.mean((f0 / scale) ** 2))
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h0 = min(h0, span)
    f1 = _safe_velocity(flow, y + h0 * f0)
    if f1 is None:
        return h0 / 10
    d2 = np.sqrt(np.mean(((f1 - f0) / scale) ** 2)) / h0
    h1 = max(1e-6, h0 * 1e-3) if max(d1, d2) <= 1e-15 else (0.01 / max(d1, d2)) ** (1 / 3)
    return min(100 * h0, h1, span)


def jacobian_sparsity(elements: np.ndarray, nv: int, d: int) -> sparse.csr_matrix:
    """Nonzero pattern of d(velocity)/d(coords): vertices sharing an element couple."""
    k = elements.shape[1]
    rows = np.repeat(elements, k, axis=1).ravel()
    cols = np.tile(elements, (1, k)).ravel()
    adj = sparse.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(nv, nv)).tocsr()
    adj.data[:] = 1.0
    return sparse.kron(adj, np.ones((d, d)), format="csr")


class _BadState(Exception):
    pass


def integrate(config: IntegratorConfig, triple: MeshTriple, field: MetricField,
              spec: FunctionalSpec, constraints: Sequence[Constraint] | None = None,
              metric_source: MetricSource | None = None,
              log_step: Callable[[dict], None] | None = None) -> IntegrationResult:
    """Advance the mesh over ``config.t_span``.

    Every accepted step keeps all element orientations; a step that folds
    an element is rejected and retried with half the step size.
    """
    if config.formulation == "xi":
        flow = XiFlow(spec, triple, field, constraints, config.tau)
        y = triple.computational.copy()
    else:
        flow = XFlow(spec, triple, field, constraints, config.tau, metric_source)
        y = triple.physical.copy()
    folds = _FoldCheck(y, triple.elements)
    fixed = triple.tags.fixed
    anchor = y[fixed].copy()
    t0, t1 = config.t_span
    span = t1 - t0
    rtol, atol = config.rtol, config.atol

    f = flow.velocity(y)
    energy = flow.value(y)
    res = IntegrationResult(y, t0, 0, 0, 0, 0.0, energy, 0)

    def grad_norm(v):
        return float(np.abs(v * (config.tau / flow.P)[:, None]).max())

    def record(t, dt, y, f):
        row = {"step": res.steps, "t": t, "dt": dt, "I_h": res.energy, "grad_norm": grad_norm(f),
               "rejections": res.rejections, "min_volume": folds.min_volume(y)}
        res.trajectory.append(row)
        if log_step is not None:
            log_step(row)

    def accept(t, dt, ynew, project=True):
        """Bookkeeping for an accepted step; returns the post-processed state."""
        # implicit solves leave ~1e-22 roundoff on rows whose velocity is zero
        ynew[fixed] = anchor
        ynew = flow.after_step(ynew, project)
        res.steps += 1
        new_energy = flow.value(ynew)
        if new_energy > res.energy + 10 * rtol * abs(res.energy):
            res.energy_violations += 1
            log.warning("energy increased at t=%.6g: %.12g -> %.12g", t, res.energy, new_energy)
        res.energy = new_energy
        return ynew

    record(t0, 0.0, y, f)
    res.t = t0
    if np.abs(f).max() * span <= atol:
        res.t = t1
        res.grad_norm = grad_norm(f)
        return res

    if config.controller == "bdf":
        y, f = _run_bdf(config, flow, triple, folds, y, res, accept, record, constraints)
    else:
        y, f = _run_explicit(config, flow, triple, folds, y, f, res, accept, record,
                             constraints, metric_source)
    res.coords = y
    res.grad_norm = grad_norm(f)
    return res


def _run_explicit(config, flow, triple, folds, y, f, res, accept, record, constraints, metric_source):
    t0, t1 = config.t_span
    span = t1 - t0
    t = t0
    rtol, atol = config.rtol, config.atol
    if config.controller == "fixed":
        nominal = config.dt if config.dt else span / 200
    else:
        dt = config.dt if config.dt else _initial_step(flow, y, f, span, rtol, atol)
    min_step = config.min_step * span
    # projection or metric resampling after a step invalidates the last stage
    refresh = bool(triple.tags.sliding.size and constraints) or (
        config.formulation == "x" and metric_source is not None)
    last_fold: np.ndarray = np.array([], dtype=int)

    while t < t1 - 1e-14 * span:
        if res.steps >= config.max_steps:
            raise MaxStepsExceeded(res.steps, t)
        if config.controller == "fixed":
            dt = min(nominal, t1 - t)
            while True:
                ynew = y + dt * f
                bad = folds.folded(ynew)
                fnew = _safe_velocity(flow, ynew) if not bad.size else None
                if fnew is not None:
                    break
                last_fold = bad
                res.rejections += 1
                res.fold_rejections += 1
                dt *= 0.5
                if dt < min_step:
                    raise MinStepReached(t, dt, last_fold)
            dt_taken = dt
        else:
            dt = min(dt, t1 - t)
            if dt < min_step:
                raise MinStepReached(t, dt, last_fold)
            k1 = f
            k2 = _safe_velocity(flow, y + 0.5 * dt * k1)
            k3 = None if k2 is None else _safe_velocity(flow, y + 0.75 * dt * k2)
            fnew = None
            if k3 is not None:
                ynew = y + dt * (2 / 9 * k1 + 1 / 3 * k2 + 4 / 9 * k3)
                bad = folds.folded(ynew)
                if not bad.size:
                    fnew = _safe_velocity(flow, ynew)
                else:
                    last_fold = bad
            if fnew is None:
                res.rejections += 1
                res.fold_rejections += 1
                dt *= 0.5
                continue
            err = dt * (-5 / 72 * k1 + 1 / 12 * k2 + 1 / 9 * k3 - 1 / 8 * fnew)
            scale = atol + rtol * np.maximum(np.abs(y), np.abs(ynew))
            enorm = float(np.abs(err / scale).max())
            if enorm > 1.0:
                res.rejections += 1
                dt *= max(0.2, 0.9 * enorm ** (-1 / 3))
                continue
            dt_taken = dt
            dt *= min(5.0, 0.9 * enorm ** (-1 / 3)) if enorm > 0 else 5.0

        t += dt_taken
        y = accept(t, dt_taken, ynew)
        f = flow.velocity(y) if refresh else fnew
        res.t = t
        record(t, dt_taken, y, f)
    return y, f


def _constraint_violation(y, tags, constraints) -> float:
    sl = tags.sliding
    if not (sl.size and constraints):
        return 0.0
    return max(float(np.abs(constraints[c].phi(y[sl[tags.constraint[sl] == c]])).max())
               for c in np.unique(tags.constraint[sl]))


def _run_bdf(config, flow, triple, folds, y, res, accept, record, constraints):
    """Variable-order BDF with a sparse finite-difference Jacobian.

    The stepper is restarted from the last accepted state with half the
    step size whenever a step folds an element or the velocity cannot be
    evaluated. Sliding vertices are projected back (with a restart) only
    once they drift off their constraints by more than the step tolerance.
    """
    t0, t1 = config.t_span
    span = t1 - t0
    shape = y.shape
    sparsity = jacobian_sparsity(triple.elements, *shape)
    min_step = config.min_step * span
    last_fold: np.ndarray = np.array([], dtype=int)
    drift_tol = config.atol + config.rtol * float(np.abs(y).max())

    def fun(_t, z):
        v = _safe_velocity(flow, z.reshape(shape))
        if v is None:
            raise _BadState
        return v.ravel()

    def start(t, y, first_step):
        if first_step is not None:
            first_step = min(first_step, t1 - t)
        return BDF(fun, t, y.ravel(), t1, rtol=config.rtol, atol=config.atol,
                   jac_sparsity=sparsity, first_step=first_step)

    t = t0
    stepper = start(t, y, config.dt)
    while stepper.status == "running":
        if res.steps >= config.max_steps:
            raise MaxStepsExceeded(res.steps, t)
        try:
            msg = stepper.step()
        except _BadState:
            msg = "bad state"
        if msg is None and stepper.status != "failed":
            ynew = stepper.y.reshape(shape)
            bad = folds.folded(ynew)
            if not bad.size:
                dt = stepper.t - t
                t = stepper.t
                ynew = ynew.copy()
                drift = _constraint_violation(ynew, triple.tags, constraints) > drift_tol
                # projecting every step would invalidate the BDF history
                y = accept(t, dt, ynew, project=drift)
                res.t = t
                f = _safe_velocity(flow, y)
                record(t, dt, y, f if f is not None else np.zeros_like(y))
                if drift and stepper.status == "running" and t1 - t > 1e-14 * span:
                    stepper = start(t, y, stepper.step_size)
                continue
            last_fold = bad
        # rejected: restart from the last accepted state with a smaller step
        res.rejections += 1
        res.fold_rejections += 1
        h = 0.5 * (stepper.t - t if stepper.t > t else stepper.h_abs)
        if h < min_step:
            raise MinStepReached(t, h, last_fold)
        stepper = start(t, y, h)
    y = project_sliding(y.copy(), triple.tags, constraints)
    return y, flow.velocity(y)


# --------------------------------------------------------------------------
# point location and mesh interpolation


class PointLocator:
    """Barycentric point location by walking, with an exhaustive fallback."""

    def __init__(self, mesh: SimplicialMesh):
        self.mesh = mesh
        self.v0 = mesh.vertices[mesh.elements[:, 0]]
        self.Einv = np.linalg.inv(mesh.edge_matrices())
        self.nb = mesh.neighbors()
        self.last = 0

    def bary(self, k: int, p: np.ndarray) -> np.ndarray:
        verts = self.mesh.vertices[self.mesh.elements[k]]
        hit = np.flatnonzero((verts == p).all(axis=1))
        if hit.size:
            lam = np.zeros(len(verts))
            lam[hit[0]] = 1.0
            return lam
        lam = self.Einv[k] @ (p - self.v0[k])
        return np.concatenate([[1.0 - lam.sum()], lam])

    def all_bary(self, p: np.ndarray) -> np.ndarray:
        lam = np.einsum("eij,ej->ei", self.Einv, p - self.v0)
        return np.concatenate([1.0 - lam.sum(axis=1, keepdims=True), lam], axis=1)

    def locate(self, p, start: int | None = None, tol: float = 1e-12):
        p = np.asarray(p, dtype=float)
        k = self.last if start is None else int(start)
        seen = set()
        for _ in range(4 * self.mesh.n_elements + 10):
            lam = self.bary(k, p)
            j = int(np.argmin(lam))
            if lam[j] >= -tol:
                self.last = k
                return k, lam
            seen.add(k)
            nxt = int(self.nb[k, j])
            if nxt < 0 or nxt in seen:
                break
            k = nxt
        lam = self.all_bary(p)
        mins = lam.min(axis=1)
        inside = np.flatnonzero(mins >= -tol)
        if inside.size:
            k = int(inside[0])
            self.last = k
            return k, self.bary(k, p)
        k = int(np.argmax(mins))
        raise PointOutside(p, k, lam[k])


def locate_point(mesh: SimplicialMesh, point, start: int | None = None, tol: float = 1e-12):
    return PointLocator(mesh).locate(point, start, tol)


CLAMP_TOL = 1e-9


def _nearest_on_boundary(mesh: SimplicialMesh, p: np.ndarray):
    """Closest point of the boundary facets (clamped facet projection)."""
    facets = mesh.boundary_facets()
    owners = mesh._cache["bfacet_owner"]
    best = (np.inf, None, None)
    for fac, k in zip(facets, owners):
        V = mesh.vertices[fac]
        A = (V[1:] - V[0]).T
        if A.shape[1]:
            mu = np.linalg.lstsq(A, p - V[0], rcond=None)[0]
            lam = np.concatenate([[1 - mu.sum()], mu])
            lam = np.clip(lam, 0, None)
            lam /= lam.sum()
        else:
            lam = np.ones(1)
        q = lam @ V
        dist = np.linalg.norm(q - p)
        if dist < best[0]:
            best = (dist, k, q)
    return best


def phi_h_interpolate(T_c_new: SimplicialMesh, T_h: SimplicialMesh,
                      T_c0: SimplicialMesh) -> SimplicialMesh:
    """New physical mesh: the vertices of T_c0 mapped through the piecewise
    affine correspondence T_c_new -> T_h."""
    if not np.array_equal(T_c_new.elements, T_h.elements):
        raise ValueError("T_c_new and T_h must share connectivity")
    loc = PointLocator(T_c_new)
    same_numbering = T_c0.n_vertices == T_c_new.n_vertices
    if same_numbering:
        flat = T_c_new.elements.ravel()
        first = np.full(T_c_new.n_vertices, -1)
        first[flat[::-1]] = (np.arange(flat.size) // T_c_new.elements.shape[1])[::-1]
    out = np.empty((T_c0.n_vertices, T_h.dim))
    nclamped = 0
    for i, p in enumerate(T_c0.vertices):
        start = int(first[i]) if same_numbering and first[i] >= 0 else None
        try:
            k, lam = loc.locate(p, start)
        except PointOutside as exc:
            k, lam = exc.element, exc.bary
            if lam.min() >= -CLAMP_TOL:
                lam = np.clip(lam, 0, None)
                lam = lam / lam.sum()
            else:
                _, k, q = _nearest_on_boundary(T_c_new, p)
                lam = loc.bary(k, q)
                lam = np.clip(lam, 0, None)
                lam = lam / lam.sum()
                nclamped += 1
        out[i] = lam @ T_h.vertices[T_h.elements[k]]
    if nclamped:
        warnings.warn(f"{nclamped} reference vertices fell outside the computational mesh "
                      "and were projected to its boundary", stacklevel=2)
    return SimplicialMesh(out, T_c0.elements, T_c0.tags.copy())


# --------------------------------------------------------------------------
# adaptation cycles


@dataclass
class AdaptResult:
    physical: SimplicialMesh
    computational: np.ndarray
    integrations: list
    field: MetricField


def adapt(triple: MeshTriple, spec: FunctionalSpec, config: IntegratorConfig,
          metric_source: MetricSource, constraints: Sequence[Constraint] | None = None,
          cycles: int = 1, log_step: Callable[[dict], None] | None = None) -> AdaptResult:
    """Run ``cycles`` rounds of (build metric, integrate, update physical mesh).

    In the xi formulation each round integrates the computational mesh and
    interpolates the reference mesh through the result; the next round
    restarts from the reference computational mesh.
    """
    results = []
    triple = MeshTriple(triple.elements, triple.reference.copy(), triple.computational.copy(),
                        triple.physical.copy(), triple.tags.copy())
    fld = None
    for cycle in range(cycles):
        phys = triple.mesh("physical")
        fld = metric_source(phys)
        cb = None if log_step is None else (lambda row, c=cycle: log_step({"cycle": c, **row}))
        if config.formulation == "xi":
            r = integrate(config, triple, fld, spec, constraints, log_step=cb)
            new_phys = phi_h_interpolate(SimplicialMesh(r.coords, triple.elements, triple.tags),
                                         phys, triple.mesh("reference"))
            triple.physical = new_phys.vertices
            triple.computational = triple.reference.copy()
            last_comp = r.coords
        else:
            r = integrate(config, triple, fld, spec, constraints, metric_source=metric_source, log_step=cb)
            triple.physical = r.coords
            last_comp = triple.computational
        results.append(r)
    return AdaptResult(triple.mesh("physical"), last_comp, results, fld)
