"""Command line front end: fracp-fem {solve, norm, experiment}."""

import argparse
import sys

import numpy as np

from . import __version__
from .assembly import AssemblyContext, dump_matrix, dump_solution, load_solution
from .config import build_experiment, build_problem, parse_config
from .experiments import run_experiment
from .mesh import build_mesh
from .norms import NormReport, besov_seminorm, energy_norm, wsp_norm
from .solver import solve


def _fmt(x):
    return "%.12g" % x


def _setup(args):
    kv = parse_config(args.config)
    prob = build_problem(kv)
    mesh = build_mesh(prob["domain"], prob["h"], mu=prob["mu"])
    ctx = AssemblyContext(mesh, prob["spec"], quad=prob["quad"],
                          eps_reg=prob["eps_reg"], backend=prob["backend"])
    return prob, mesh, ctx


def cmd_solve(args):
    prob, mesh, ctx = _setup(args)
    u, rep = solve(ctx, prob["f"], prob["controls"])
    if args.dump_mesh:
        mesh.dump(args.dump_mesh)
    if args.dump_solution:
        dump_solution(args.dump_solution, u)
    if args.dump_matrix:
        dump_matrix(args.dump_matrix, ctx.jacobian(u))
    print("field,value")
    print("converged,%s" % str(rep.converged).lower())
    print("method,%s" % rep.method)
    print("backend,%s" % rep.backend)
    print("iterations,%d" % rep.iterations)
    print("residual_norm,%s" % _fmt(rep.residual_norm))
    print("energy,%s" % _fmt(rep.energy))
    print("wsp_norm,%s" % _fmt(rep.wsp_norm))
    print("f_surrogate,%s" % _fmt(rep.f_surrogate))
    print("stability_ratio,%s" % _fmt(rep.stability_ratio))
    print("min_coefficient,%s" % _fmt(rep.min_coefficient))
    print("ndof,%d" % mesh.ndof)
    print("seconds,%.3f" % rep.seconds)
    return 0 if rep.converged else 1


def cmd_norm(args):
    prob, mesh, ctx = _setup(args)
    u = load_solution(args.solution, mesh)
    s, p = ctx.spec.s, ctx.spec.p
    if args.family == "wsp":
        report = NormReport(value=wsp_norm(ctx, u), family="wsp",
                            params={"s": s, "p": p})
    elif args.family == "energy":
        report = NormReport(value=energy_norm(ctx, u), family="energy",
                            params={"s": s, "p": p,
                                    "kernel": ctx.spec.family})
    else:
        sigma = args.sigma if args.sigma is not None else prob["sigma"]
        if sigma is None:
            sigma = s
        report = NormReport(value=besov_seminorm(u, sigma, p),
                            params={"sigma": sigma, "p": p}, family="besov")
    keys = sorted(report.params)
    print("family,value," + ",".join(keys))
    print(",".join([report.family, _fmt(report.value)]
                   + [_fmt(report.params[k]) if isinstance(report.params[k], float)
                      else str(report.params[k]) for k in keys]))
    return 0


def cmd_experiment(args):
    kv = parse_config(args.config)
    config = build_experiment(kv)
    if args.outdir:
        config.outdir = args.outdir
    result = run_experiment(config)
    for cell in result.cells:
        status = "ok" if cell.ok else "FAILED: " + cell.message
        print("cell s=%g p=%g: %s (%.2f s)" % (cell.s, cell.p, status,
                                               cell.seconds))
        for f in cell.fits:
            if not f.failed:
                print("  %s: alpha=%.4f residual=%.2e n=%d" %
                      (f.anchor, f.alpha, f.residual, f.n_samples))
        if cell.rates is not None:
            print("  slope=%.4f steps=%s" %
                  (cell.rates.slope,
                   np.array2string(np.asarray(cell.rates.step_rates),
                                   precision=3)))
    if config.outdir:
        print("outputs in %s" % config.outdir)
    return 0 if result.all_ok else 1


def main(argv=None):
    ap = argparse.ArgumentParser(
        prog="fracp-fem",
        description="Finite elements for fractional p-Laplacians "
                    "with optional finite horizon.")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("solve", help="solve one Dirichlet problem")
    sp.add_argument("--config", required=True)
    sp.add_argument("--dump-solution", metavar="PATH")
    sp.add_argument("--dump-mesh", metavar="PATH")
    sp.add_argument("--dump-matrix", metavar="PATH")
    sp.set_defaults(func=cmd_solve)

    np_ = sub.add_parser("norm", help="evaluate a norm of a dumped solution")
    np_.add_argument("--config", required=True)
    np_.add_argument("--solution", required=True)
    np_.add_argument("--family", required=True,
                     choices=("wsp", "energy", "besov"))
    np_.add_argument("--sigma", type=float, default=None,
                     help="Besov smoothness order (defaults to s)")
    np_.set_defaults(func=cmd_norm)

    ep = sub.add_parser("experiment", help="run a study config")
    ep.add_argument("--config", required=True)
    ep.add_argument("--outdir", default=None,
                    help="override the config's output directory")
    ep.set_defaults(func=cmd_experiment)

    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
