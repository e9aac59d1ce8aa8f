"""Batch command-line front end.

Subcommands: ``solve-eps``, ``solve-limit``, ``sweep``, ``verify``,
``mms``.  Exit codes: 0 success, 1 verification failure, 2 config
error, 3 solver error.  Identical configs produce byte-identical
CSV/JSON artifacts; wall-clock timings go to a separate sidecar.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import vtk_export
from .asymptotics import run_sweep
from .config import load_config
from .errors import ConfigError, DarcyChannelError, ExpressionError
from .eps_solver import assemble_eps, mms_verify, solve_eps
from .discretization.norms import norm_bundle
from .limit_solver import (
    assemble_limit,
    limit_energy_terms,
    mms_verify_limit,
    solve_limit,
)
from .verify import SUITES, run_suites

EXIT_OK = 0
EXIT_VERIFY_FAILED = 1
EXIT_CONFIG = 2
EXIT_SOLVER = 3


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    raise TypeError(f"not serializable: {type(obj)!r}")


def write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def write_csv(path, header, rows):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join("" if v is None else repr(float(v)) for v in row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _prepare(args):
    cfg = load_config(args.config, overrides=args.set or (), out_dir=args.out, jobs=args.jobs)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return cfg, out


def _say(args, message):
    if not args.quiet:
        print(message)


def cmd_solve_eps(args):
    cfg, out = _prepare(args)
    chart = cfg.build_chart()
    mesh = cfg.build_mesh(cfg.build_spec(chart))
    coeffs = cfg.build_coefficients()
    system = assemble_eps(coeffs, mesh)
    sol = solve_eps(system)
    bundle = norm_bundle(sol, chart)
    write_json(
        out / "norm_bundle.json",
        {
            "eps": sol.eps,
            "residual_norm": sol.residual_norm,
            "flux_matching_mismatch": sol.flux_mismatch,
            "bundle": bundle,
        },
    )
    vtk_export.export_eps_solution(out, sol)
    _say(args, f"solved eps={sol.eps:g}; residual {sol.residual_norm:.2e}; wrote {out}")
    return EXIT_OK


def cmd_solve_limit(args):
    cfg, out = _prepare(args)
    chart = cfg.build_chart()
    mesh = cfg.build_mesh(cfg.build_spec(chart))
    coeffs = cfg.build_coefficients()
    system = assemble_limit(coeffs, mesh)
    sol = solve_limit(system)
    terms = limit_energy_terms(system, sol)
    write_json(
        out / "limit_summary.json",
        {
            "residual_norm": sol.residual_norm,
            "energy_terms": terms,
            "p2_pinned": system.meta.get("p2_pinned", False),
        },
    )
    vtk_export.export_limit_solution(out, sol)
    _say(args, f"solved limit problem; residual {sol.residual_norm:.2e}; wrote {out}")
    return EXIT_OK


def cmd_sweep(args):
    cfg, out = _prepare(args)
    chart = cfg.build_chart()
    mesh = cfg.build_mesh(cfg.build_spec(chart))
    coeffs = cfg.build_coefficients(eps=1.0)
    report = run_sweep(
        coeffs,
        chart,
        mesh,
        cfg.eps_list,
        slack=cfg.slack,
        ceiling=cfg.ceiling,
        jobs=cfg.jobs,
        config_echo=cfg.echo(),
    )
    names = sorted(report.diagnostics)
    bundle_names = sorted(report.bundles[0])
    header = ["eps"] + names + bundle_names
    rows = []
    for k, eps in enumerate(report.eps_list):
        row = [eps]
        row += [report.diagnostics[n][k] for n in names]
        row += [report.bundles[k][n] for n in bundle_names]
        rows.append(row)
    write_csv(out / "sweep.csv", header, rows)
    write_json(
        out / "sweep.json",
        {
            "eps_list": report.eps_list,
            "diagnostics": report.diagnostics,
            "bundles": report.bundles,
            "relations": report.relations,
            "slopes": report.slopes,
            "bundle_bounded": report.bundle_bounded,
            "bundle_slope_ok": report.bundle_slope_ok,
            "trends": report.diagnostic_ok(),
            "slack": report.slack,
            "ceiling": report.ceiling,
            "config": report.config_echo,
        },
    )
    write_json(out / "timings.json", report.wall_times)
    _say(args, f"sweep over {len(report.eps_list)} scales; wrote {out}/sweep.csv")
    return EXIT_OK


def cmd_verify(args):
    cfg, out = _prepare(args)
    names = [args.suite] if args.suite else None
    bias = 0.05 if args.inject_broken_derivative else 0.0
    results, ok = run_suites(names, seed=cfg.seed, chart_bias=bias)
    width = max(len(f"{r.suite}.{r.name}") for r in results)
    for r in results:
        _say(args, f"{'PASS' if r.passed else 'FAIL'}  {r.suite}.{r.name:<{width}}  {r.detail}")
    write_json(
        out / "verify.json",
        [
            {"suite": r.suite, "name": r.name, "passed": r.passed, "detail": r.detail}
            for r in results
        ],
    )
    return EXIT_OK if ok else EXIT_VERIFY_FAILED


def cmd_mms(args):
    cfg, out = _prepare(args)
    chart = cfg.build_chart()
    rep_eps = mms_verify(chart, eps=cfg.eps)
    rep_lim = mms_verify_limit(chart)
    _say(args, "coupled solver:")
    _say(args, rep_eps.format_table())
    _say(args, "reduced solver:")
    _say(args, rep_lim.format_table())
    write_json(
        out / "mms.json",
        {
            "coupled": {"h": rep_eps.h, "errors": rep_eps.errors, "orders": rep_eps.orders},
            "reduced": {"h": rep_lim.h, "errors": rep_lim.errors, "orders": rep_lim.orders},
        },
    )
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="darcychannel",
        description="Coupled porous/channel flow solves, the reduced "
        "interface limit, and channel-scale sweeps.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="TOML configuration file")
        p.add_argument(
            "--set",
            action="append",
            metavar="K=V",
            help="override a config key (dotted path), repeatable",
        )
        p.add_argument("--out", help="output directory (overrides config)")
        p.add_argument("--jobs", type=int, help="worker cap for parallel parts")
        p.add_argument("--quiet", action="store_true", help="suppress progress output")

    for name, fn, desc in (
        ("solve-eps", cmd_solve_eps, "solve the coupled problem at one channel scale"),
        ("solve-limit", cmd_solve_limit, "solve the reduced interface problem"),
        ("sweep", cmd_sweep, "solve along a decreasing scale list and report trends"),
        ("verify", cmd_verify, "run the operator/inequality/inf-sup property suites"),
        ("mms", cmd_mms, "manufactured-solution convergence study for both solvers"),
    ):
        p = sub.add_parser(name, help=desc)
        common(p)
        p.set_defaults(handler=fn)
        if name == "verify":
            p.add_argument("--suite", choices=sorted(SUITES), help="run one suite only")
            p.add_argument(
                "--inject-broken-derivative",
                action="store_true",
                help="negative control: bias the chart slope so the operator suite fails",
            )
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except (ConfigError, ExpressionError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DarcyChannelError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
