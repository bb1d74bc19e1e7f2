"""hedgelab command line."""

from __future__ import annotations

import argparse
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import harness
from .config import ConfigError, emit_csv, emit_json, load_config
from .pricing import dump_surface_csv, eval_surface
from .variational import oracle_row

SAMPLE_FIELDS = ["path_id", "err", "q", "drift", "u_stat"]
ETA_FIELDS = ["alpha", "eta_L", "eta_F", "eta_simple", "eta_dagger"]
ORACLE_FIELDS = ["a", "gamma", "case", "oracle_min", "eta_star", "rel_gap", "m"]


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _experiment(args):
    loaded = load_config(args.config)
    exp = loaded.experiment
    if getattr(args, "paths", None) is not None:
        exp = replace(exp, n_paths=args.paths)
    if getattr(args, "seed", None) is not None:
        exp = replace(exp, seed=args.seed)
    return loaded, exp


def _samples_rows(samples):
    return [{f: getattr(s, f) for f in SAMPLE_FIELDS} for s in samples]


def cmd_price(args) -> int:
    loaded, exp = _experiment(args)
    surface = harness.build_surface(exp)
    s0 = exp.model.s0
    p, d, g, nu = (float(np.asarray(v).ravel()[0]) for v in eval_surface(surface, np.array([s0]), 0.0))
    out = _out_dir(args)
    emit_json({
        "surface": surface.kind,
        "s0": s0,
        "price": p,
        "delta": d,
        "gamma": g,
        "nu": nu,
        "initial_wealth": p + exp.cost.kappa * s0 * abs(d),
        "v_hat": surface.v_hat,
        "flagged_levels": len(surface.flagged_levels),
    }, out / "price.json")
    if surface.kind == "grid":
        dump_surface_csv(surface, out / "surface.csv")
    return 0


def _run(args, name: str) -> int:
    loaded, exp = _experiment(args)
    result = harness.run_experiment(exp, threads=args.threads)
    out = _out_dir(args)
    emit_csv(_samples_rows(result.samples), SAMPLE_FIELDS, out / "samples.csv")
    report = {
        "n_paths": exp.n_paths,
        "n_samples": len(result.samples),
        "aborted": result.aborted,
        "n_steps": result.n_steps,
        "seed": exp.seed,
        "flags": result.flags,
        "config": loaded.document,
    }
    try:
        report["clt"] = asdict(harness.clt_diagnostics(result.samples))
    except ValueError as exc:
        if name == "clt":
            raise
        report["clt"] = str(exc)
    emit_json(report, out / f"{name}_report.json")
    return 0


def cmd_simulate(args) -> int:
    return _run(args, "simulate")


def cmd_clt(args) -> int:
    return _run(args, "clt")


def cmd_eta_table(args) -> int:
    if not args.step > 0 or args.alpha_max < args.alpha_min:
        raise ConfigError("need step > 0 and alpha-max >= alpha-min")
    n = int(np.floor((args.alpha_max - args.alpha_min) / args.step + 1e-9)) + 1
    grid = args.alpha_min + args.step * np.arange(n)
    emit_csv(harness.eta_comparison_table(grid), ETA_FIELDS, _out_dir(args) / "eta_table.csv")
    return 0


def cmd_frontier(args) -> int:
    loaded, exp = _experiment(args)
    doc = loaded.document
    rows = harness.frontier_scan(exp.model, exp.payoff, exp.cost, doc["alpha_grid"], doc["eta"])
    emit_csv(rows, ["alpha", "initial_wealth", f"eta_{doc['eta']}"], _out_dir(args) / "frontier.csv")
    return 0


def cmd_optimize_y(args) -> int:
    row = oracle_row(args.a, args.gamma, m=args.segments, iters=args.iters)
    emit_csv([row], ORACLE_FIELDS, _out_dir(args) / "optimize_y.csv")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hedgelab", description="Hedging with transaction costs: pricing, simulation and variance tables.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", required=True, help="JSON experiment config")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--threads", type=int, default=None, help="worker threads (default: HEDGELAB_THREADS or all cores)")

    p = sub.add_parser("price", help="price and greeks at the initial point")
    common(p)
    p.set_defaults(func=cmd_price)

    for name, fn in (("simulate", cmd_simulate), ("clt", cmd_clt)):
        p = sub.add_parser(name, help=f"{name} hedging errors over many paths")
        common(p)
        p.add_argument("--paths", type=int, default=None)
        p.add_argument("--seed", type=int, default=None)
        p.set_defaults(func=fn)

    p = sub.add_parser("eta-table", help="variance coefficients on an alpha grid")
    common(p, config=False)
    p.add_argument("--alpha-min", type=float, default=0.1)
    p.add_argument("--alpha-max", type=float, default=4.0)
    p.add_argument("--step", type=float, default=0.1)
    p.set_defaults(func=cmd_eta_table)

    p = sub.add_parser("frontier", help="initial wealth against variance coefficient")
    common(p)
    p.set_defaults(func=cmd_frontier)

    p = sub.add_parser("optimize-y", help="brute-force minimum of the reduced variational problem")
    common(p, config=False)
    p.add_argument("--a", type=float, required=True)
    p.add_argument("--gamma", type=float, required=True)
    p.add_argument("--segments", type=int, default=64)
    p.add_argument("--iters", type=int, default=20000)
    p.set_defaults(func=cmd_optimize_y)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError, RuntimeError, OSError) as exc:
        print(f"hedgelab: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
