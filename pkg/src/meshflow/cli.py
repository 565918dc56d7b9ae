"""Command-line front end: smooth, adapt, gradcheck, bench and example."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from contextlib import nullcontext
from pathlib import Path

from . import experiments as ex
from .errors import MeshflowError
from .functionals import FunctionalSpec
from .io import JsonlWriter, RunManifest, read_mesh, read_nodal, write_mesh, write_vtk
from .meshgen import criss_cross
from .metric import analytic_source, hessian_source, horseshoe_metric, identity_source
from .oracle import DEFAULT_SEED, GRAD_RTOL_X, GRAD_RTOL_XI
from .solver import IntegratorConfig

EXIT_OK, EXIT_CHECK_FAILED, EXIT_USAGE, EXIT_SOLVER, EXIT_IO = 0, 1, 2, 3, 4


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--functional", choices=["winslow", "huang"], default="huang")
    p.add_argument("--theta", type=float, default=1.0 / 3.0)
    p.add_argument("--p", type=float, default=2.0)
    p.add_argument("--tau", type=float, default=0.1)
    p.add_argument("--t-end", type=float, default=1.0)
    p.add_argument("--formulation", choices=["xi", "x"], default="xi")
    p.add_argument("--controller", choices=["bdf", "adaptive", "fixed"], default="bdf")
    p.add_argument("--rtol", type=float, default=1e-4)
    p.add_argument("--atol", type=float, default=1e-7)
    p.add_argument("--cycles", type=int, default=1)
    p.add_argument("--boundary", choices=["fixed", "sliding"], default="fixed")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--stats", help="write one JSON line per accepted step here")
    p.add_argument("--out", help="directory for meshes, VTK, manifest and summary")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="meshflow", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("smooth", help="M = I flow on a randomly perturbed criss-cross mesh")
    _common(p)
    p.add_argument("--n", type=int, default=11)
    p.add_argument("--perturb", type=float, default=0.3)

    p = sub.add_parser("adapt", help="adaptation cycles on a mesh file or a generated grid")
    _common(p)
    p.add_argument("--mesh", help="physical mesh (.node/.ele base name)")
    p.add_argument("--computational", help="computational mesh; defaults to the physical one")
    p.add_argument("--n", type=int, default=21)
    p.add_argument("--metric", default="identity",
                   help="identity | horseshoe | hessian:sine | hessian:spheres | hessian:<nodal file>")

    p = sub.add_parser("gradcheck", help="analytic vs finite-difference gradients")
    p.add_argument("--functional", choices=["winslow", "huang"], default="huang")
    p.add_argument("--theta", type=float, default=1.0 / 3.0)
    p.add_argument("--p", type=float, default=2.0)
    p.add_argument("--formulation", choices=["xi", "x"], default="xi")
    p.add_argument("--d", type=int, choices=[1, 2, 3], default=2)
    p.add_argument("--n", type=int, default=None, help="grid points per axis")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)

    p = sub.add_parser("bench", help="wall time of integrate() for the sine-wave setup")
    _common(p)
    p.add_argument("--sizes", type=int, nargs="+", default=[11, 23, 45])

    p = sub.add_parser("example", help="run a named experiment end to end")
    _common(p)
    p.add_argument("name", choices=sorted(ex.EXAMPLES))
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--metric", default=None, help="horseshoe only: identity | horseshoe")
    p.add_argument("--perturb", type=float, default=0.3)
    return parser


def _spec(a) -> FunctionalSpec:
    return FunctionalSpec(a.functional, a.theta, a.p)


def _config(a) -> IntegratorConfig:
    return IntegratorConfig(tau=a.tau, t_span=(0.0, a.t_end), controller=a.controller,
                            rtol=a.rtol, atol=a.atol, formulation=a.formulation)


def _manifest(a, metric: str, **extra) -> RunManifest:
    return RunManifest(command=a.command, functional=a.functional, theta=a.theta, p=a.p,
                       tau=a.tau, t_span=[0.0, a.t_end], formulation=a.formulation, metric=metric,
                       boundary=a.boundary, cycles=a.cycles, seed=a.seed, extra=extra)


def metric_from_flag(flag: str):
    """Map a --metric value to a metric source."""
    if flag == "identity":
        return identity_source
    if flag == "horseshoe":
        return analytic_source(horseshoe_metric(ex.R_HORSESHOE))
    if flag.startswith("hessian:"):
        what = flag.split(":", 1)[1]
        if what == "sine":
            return hessian_source(ex.sine_wave_u)
        if what == "spheres":
            return hessian_source(ex.nine_spheres_u)
        values = read_nodal(what)[:, 0]

        def from_file(mesh):
            from .metric import build_hessian_metric

            return build_hessian_metric(mesh, values)

        return from_file
    raise ValueError(f"unknown metric {flag!r}")


def _write_outputs(out: Path | None, result: ex.ExperimentResult, manifest: RunManifest) -> None:
    if out is None:
        return
    out.mkdir(parents=True, exist_ok=True)
    write_vtk(result.initial, out / "initial.vtk")
    if result.final is not None:
        write_mesh(result.final, out / "physical")
        write_vtk(result.final, out / "final.vtk", field=result.field)
    manifest.save(out / "manifest.json")
    (out / "summary.json").write_text(json.dumps(result.summary, indent=2))


def _report(result: ex.ExperimentResult) -> int:
    short = {k: v for k, v in result.summary.items() if not isinstance(v, list)}
    print(json.dumps(short, indent=2))
    return EXIT_CHECK_FAILED if result.folded else EXIT_OK


def cmd_smooth(a) -> int:
    with _stats(a) as log:
        r = ex.smoothing(a.n, a.perturb, a.seed, _spec(a), _config(a), a.boundary, a.cycles, log)
    _write_outputs(_out(a), r, _manifest(a, "identity", n=a.n, perturb=a.perturb))
    return _report(r)


def cmd_adapt(a) -> int:
    if a.mesh:
        phys = read_mesh(a.mesh)
        ref = read_mesh(a.computational) if a.computational else phys
    else:
        ref = phys = criss_cross(a.n)
    with _stats(a) as log:
        r = ex.run_experiment("adapt", ref, phys, _spec(a), _config(a),
                              metric_from_flag(a.metric), a.boundary, a.cycles, log)
    _write_outputs(_out(a), r, _manifest(a, a.metric, mesh=a.mesh, n=a.n))
    return _report(r)


def cmd_gradcheck(a) -> int:
    spec = FunctionalSpec(a.functional, a.theta, a.p)
    n = a.n or {1: 40, 2: 8, 3: 4}[a.d]
    if a.formulation == "xi":
        err, tol = ex.gradcheck_xi(spec, a.d, n, a.seed), GRAD_RTOL_XI
    else:
        err, tol = ex.gradcheck_x(spec, a.d, n, a.seed), GRAD_RTOL_X
    print(json.dumps({"d": a.d, "functional": a.functional, "formulation": a.formulation,
                      "max_relative_error": err, "tolerance": tol, "pass": err <= tol}))
    return EXIT_OK if err <= tol else EXIT_CHECK_FAILED


def cmd_bench(a) -> int:
    rows = []
    for n in a.sizes:
        row = ex.time_integrate(n, _spec(a), _config(a))
        row.pop("energies")
        rows.append(row)
        print(json.dumps(row), flush=True)
    out = _out(a)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "bench.json").write_text(json.dumps(rows, indent=2))
    return EXIT_OK


def cmd_example(a) -> int:
    kw = {"spec": _spec(a), "config": _config(a), "boundary": a.boundary, "cycles": a.cycles}
    if a.n is not None:
        kw["n"] = a.n
    if a.name == "horseshoe" and a.metric:
        kw["metric"] = a.metric
    if a.name == "smoothing":
        kw.update(perturb=a.perturb, seed=a.seed)
    with _stats(a) as log:
        r = ex.EXAMPLES[a.name](log_step=log, **kw)
    _write_outputs(_out(a), r, _manifest(a, a.metric or "default", example=a.name, n=a.n))
    return _report(r)


def _out(a) -> Path | None:
    return Path(a.out) if a.out else None


def _stats(a):
    return JsonlWriter(a.stats) if getattr(a, "stats", None) else nullcontext(None)


COMMANDS = {"smooth": cmd_smooth, "adapt": cmd_adapt, "gradcheck": cmd_gradcheck,
            "bench": cmd_bench, "example": cmd_example}


def _thread_limit():
    threads = os.environ.get("MESHFLOW_THREADS")
    if not threads:
        return nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=int(threads))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with _thread_limit():
            return COMMANDS[args.command](args)
    except MeshflowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO if isinstance(exc, OSError) else EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
