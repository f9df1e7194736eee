"""Command-line entry point: forward runs, simulation, inversion, bound checks.

Exit codes: 0 success, 1 domain failures (certification, expansion validity,
activity window), 2 usage errors.  Every run that writes files also writes a
manifest.json with the fully resolved configuration, so reruns are
reproducible bit for bit.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .cluster import check_tree_graph_bound, check_ursell_decay, enumerate_connected_graphs, \
    enumerate_trees, mayer_context, ursell_truncated
from .convolution import build_ladder, check_banach_algebra, check_geometric_decay, series_w_sigma
from .forward import check_cavity_lower_bound, rdf_expansion
from .gcmc import GCMCConfig, run_gcmc
from .ibi import IBIConfig, pmf_initial_guess, run_ibi, save_trace
from .potentials import (EnsembleParams, LJTypeParams, Potential,
                         estimate_stability_constant, load_potential,
                         mayer_integral_bound, perturbation_radius, require_certified)
from .reports import CertificationError, ExpansionValidityError, GasPhaseError
from .spaces import RadialFunction, RadialGrid, load_radial_function


def _write_manifest(out_dir, subcommand, config):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {"version": __version__, "subcommand": subcommand, "config": config}
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out_dir


def _write_csv(path, header, columns):
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in zip(*columns):
            writer.writerow([f"{x:.17g}" for x in row])


def _load_potential_arg(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"potential file not found: {path}")
    return load_potential(path)


def _resolve_ensemble(u, beta, z_arg, grid):
    """Compute the activity window constants; 'auto' puts z at 0.25 * z_max_gas."""
    ctx = mayer_context(u, beta, grid)
    c_beta = mayer_integral_bound(ctx.f)
    b_hat = estimate_stability_constant(u).B_hat
    probe = EnsembleParams(beta=beta, z=1e-300, c_beta=c_beta, B=b_hat)
    z = 0.25 * probe.z_max_gas if z_arg == "auto" else float(z_arg)
    return EnsembleParams(beta=beta, z=z, c_beta=c_beta, B=b_hat)


def _cmd_forward(args):
    u = _load_potential_arg(args.potential)
    grid = u.default_grid()
    ens = _resolve_ensemble(u, args.beta, args.z, grid)
    out = _write_manifest(args.out, "forward", {
        "potential": str(args.potential), "beta": args.beta, "z": ens.z,
        "backend": args.backend, "order": args.order, "seed": args.seed,
    })
    if args.backend == "expansion":
        result = rdf_expansion(u, args.beta, ens.z, n_max=args.order, grid=grid, ens=ens)
        _write_csv(out / "g.csv", ["r", "value"], (grid.nodes, result.g.values))
        _write_csv(out / "y.csv", ["r", "value"], (grid.nodes, result.y_values))
        diagnostics = {"backend": "expansion", "rho0": result.rho0, **result.diagnostics}
    else:
        cfg = GCMCConfig(box_side=args.box_side, beta=args.beta, z=ens.z, seed=args.seed)
        result = run_gcmc(u, cfg, ens=ens)
        _write_csv(out / "g.csv", ["r", "value", "stderr"],
                   (result.radii, result.g_hist.values, result.g_err))
        with np.errstate(over="ignore"):
            y = np.exp(args.beta * np.asarray(u(result.radii))) * result.g_hist.values
        _write_csv(out / "y.csv", ["r", "value"], (result.radii, y))
        diagnostics = {"backend": "gcmc", "rho0": result.rho0_mean,
                       "rho0_err": result.rho0_err, **result.diagnostics}
    (out / "diagnostics.json").write_text(json.dumps(diagnostics, indent=2) + "\n")
    return 0


def _cmd_simulate(args):
    u = _load_potential_arg(args.potential)
    cfg_dict = json.loads(Path(args.config).read_text())
    cfg = GCMCConfig(**cfg_dict)
    out = _write_manifest(args.out, "simulate", {
        "potential": str(args.potential), "gcmc": cfg_dict, "seed": cfg.seed,
    })
    result = run_gcmc(u, cfg)
    _write_csv(out / "g.csv", ["r", "value", "stderr"],
               (result.radii, result.g_hist.values, result.g_err))
    occupied = np.nonzero(result.n_distribution)[0]
    n_max = int(occupied[-1]) + 1 if occupied.size else 1
    _write_csv(out / "N_hist.csv", ["N", "count"],
               (np.arange(n_max), result.n_distribution[:n_max]))
    (out / "diagnostics.json").write_text(json.dumps({
        "rho0_mean": result.rho0_mean, "rho0_err": result.rho0_err,
        "n_mean": result.n_mean, "n_var": result.n_var,
        "acceptance_rates": result.acceptance_rates, **result.diagnostics,
    }, indent=2) + "\n")
    return 0


def _load_family(path):
    if path is None:
        from .presets import reference_family
        return reference_family()
    d = json.loads(Path(path).read_text())
    return LJTypeParams(alpha=d["alpha"], r0=d["r0"], c0=d["c0"], C0=d["C0"])


def _cmd_invert(args):
    gpath = Path(args.gdagger)
    if not gpath.exists():
        raise FileNotFoundError(f"target RDF not found: {gpath}")
    g_dagger, _ = load_radial_function(gpath)
    family = _load_family(args.family)
    if args.u0 == "pmf":
        u0 = pmf_initial_guess(g_dagger, args.beta, family)
    else:
        u0 = _load_potential_arg(args.u0)
    gamma = None if args.gamma == "1/beta" else float(args.gamma)
    grid = g_dagger.grid
    ens = _resolve_ensemble(u0, args.beta, args.z, grid)
    cfg = IBIConfig(beta=args.beta, z=ens.z, gamma=gamma, max_iters=args.max_iters,
                    residual_tol=args.tol, forward_backend=args.backend)
    out = _write_manifest(args.out, "invert", {
        "gdagger": str(args.gdagger), "u0": str(args.u0), "beta": args.beta,
        "z": ens.z, "gamma": args.gamma, "backend": args.backend,
        "max_iters": args.max_iters, "tol": args.tol,
    })
    trace = run_ibi(u0, g_dagger, cfg)
    save_trace(trace, out)
    if not trace.certified:
        print("inversion stopped: iterate left the admissible family", file=sys.stderr)
        return 1
    return 0


def _cmd_verify_bounds(args):
    u = _load_potential_arg(args.potential)
    grid = u.default_grid()
    require_certified(u, grid)
    ens = _resolve_ensemble(u, args.beta, args.z, grid)
    out = _write_manifest(args.out, "verify-bounds", {
        "potential": str(args.potential), "beta": args.beta, "z": ens.z,
        "seed": args.seed, "quick": args.quick,
    })
    ctx = mayer_context(u, args.beta, grid)
    alpha = u.params.alpha
    pr = perturbation_radius(u, args.beta, ens.c_beta, ens.B, grid)
    w = RadialFunction(grid, np.abs(ctx.f.values) / ens.c_beta
                       + pr.C_beta * pr.delta0 / (1.0 + grid.nodes**2) ** (alpha / 2.0),
                       tail_exponent=alpha)
    reports = [check_banach_algebra(ctx.f, ctx.f, alpha)]
    ladder = build_ladder(w, alpha, n_max=6 if args.quick else 10)
    reports.append(check_geometric_decay(ladder))
    series = series_w_sigma(ladder, tol=1e-3 if args.quick else 1e-6)
    expansion = ursell_truncated(u, args.beta, ens.z, n_max=3, grid=grid, ens=ens)
    reports.append(check_ursell_decay(expansion, alpha, ens, series.fn))
    if not args.quick:
        reports.append(check_tree_graph_bound(
            u, args.beta, 3, np.array([0.5, 1.0, 1.5, 2.5]), ens, series.fn,
            grid=grid, mc_budget=100_000, seed=args.seed))
    if ens.z <= ens.z_max_strict:
        fwd = rdf_expansion(u, args.beta, ens.z, n_max=3, grid=grid, ens=ens)
        reports.append(check_cavity_lower_bound(fwd, ens))
    payload = [r.to_dict() for r in reports]
    (out / "bounds_report.json").write_text(json.dumps(payload, indent=2) + "\n")
    failed = [r for r in reports if not r.passed]
    for r in reports:
        print(f"[{'PASS' if r.passed else 'FAIL'}] {r.inequality}: "
              f"lhs={r.lhs:.6g} rhs={r.rhs:.6g}")
    return 1 if failed else 0


def _cmd_graphs(args):
    connected = enumerate_connected_graphs(args.n)
    trees = enumerate_trees(args.n)
    print(f"connected: {len(connected)}, trees: {len(trees)}")
    if args.adjacency:
        for g in connected:
            kind = "tree" if len(g.edges) == args.n - 1 else "graph"
            print(f"{kind} {sorted(g.edges)}")
    if args.out:
        out = _write_manifest(args.out, "graphs", {"n": args.n})
        (out / "graphs.json").write_text(json.dumps({
            "n": args.n, "connected_count": len(connected), "tree_count": len(trees),
            "connected": [sorted(g.edges) for g in connected],
        }, indent=2) + "\n")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="ibikit",
                                     description="iterative Boltzmann inversion toolkit")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("forward", help="evaluate the forward map u -> g")
    p.add_argument("--potential", required=True)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--z", default="auto", help="activity, or 'auto' for 0.25*z_max_gas")
    p.add_argument("--backend", choices=("expansion", "gcmc"), default="expansion")
    p.add_argument("--order", type=int, default=3)
    p.add_argument("--box-side", type=float, default=12.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_forward)

    p = sub.add_parser("simulate", help="grand canonical Monte Carlo run")
    p.add_argument("--potential", required=True)
    p.add_argument("--config", required=True, help="GCMC configuration JSON")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("invert", help="iterative Boltzmann inversion")
    p.add_argument("--gdagger", required=True, help="target RDF CSV (with JSON sidecar)")
    p.add_argument("--u0", default="pmf", help="initial potential CSV, or 'pmf'")
    p.add_argument("--family", default=None, help="family parameters JSON")
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--z", default="auto")
    p.add_argument("--gamma", default="1/beta")
    p.add_argument("--backend", choices=("expansion", "gcmc"), default="expansion")
    p.add_argument("--max-iters", type=int, default=20)
    p.add_argument("--tol", type=float, default=1e-9)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_invert)

    p = sub.add_parser("verify-bounds", help="run the inequality suite")
    p.add_argument("--potential", required=True)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--z", default="auto")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--quick", action="store_true", help="skip the Monte Carlo checks")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_verify_bounds)

    p = sub.add_parser("graphs", help="connected-graph and tree counts")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--adjacency", action="store_true", default=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_graphs)

    return parser


def dispatch(argv):
    """Parse argv and run one subcommand; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 2
    except (CertificationError, GasPhaseError, ExpansionValidityError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main(argv=None):
    return dispatch(sys.argv[1:] if argv is None else argv)


if __name__ == "__main__":
    sys.exit(main())
