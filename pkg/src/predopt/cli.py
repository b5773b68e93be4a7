"""Command-line interface.

Subcommands:
  predopt run --config FILE [--out DIR]     run a configured experiment
  predopt diagnostics --suite NAME [...]    run a diagnostics suite
  predopt emit-mip --kind KIND [...]        emit an LP/MIP model file

Exit codes: 0 success, 2 configuration error, 3 data error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import datagen, diagnostics, harness, mipgen
from .datagen import DataError
from .harness import ConfigError, ExperimentConfig


def _load_config(path: str) -> dict:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from exc
    if path.endswith(".json"):
        try:
            return json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON config: {exc}") from exc
    try:
        import tomli
    except ImportError as exc:  # pragma: no cover
        raise ConfigError("TOML configs need the 'tomli' package") from exc
    try:
        return tomli.loads(raw.decode("utf-8"))
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML config: {exc}") from exc


def _cmd_run(args) -> int:
    cfg_dict = _load_config(args.config)
    if args.out is not None:
        cfg_dict["out_dir"] = args.out
    cfg = ExperimentConfig.from_dict(cfg_dict)
    os.makedirs(cfg.out_dir, exist_ok=True)
    t0 = time.perf_counter()
    rows = harness.run_experiment(cfg)
    elapsed = time.perf_counter() - t0
    results = os.path.join(cfg.out_dir, "results.csv")
    harness.write_results(rows, results)
    harness.write_summary(rows, os.path.join(cfg.out_dir, "summary.txt"), elapsed)
    print(f"wrote {len(rows)} rows to {results}")
    return 0


def _cmd_diagnostics(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    lines = []
    if args.suite == "bounds":
        reports = harness.run_bounds_suite(seed=args.seed)
        csv_path = os.path.join(args.out, "bounds.csv")
        with open(csv_path, "w") as fh:
            fh.write("mode,lhs,rhs,slack,satisfied\n")
            for r in reports:
                fh.write(
                    f"{r.mode},{r.lhs:.17g},{r.rhs:.17g},{r.slack:.17g},{int(r.satisfied)}\n"
                )
        bad = sum(not r.satisfied for r in reports)
        lines.append(f"bounds suite: {len(reports)} checks, {bad} violations")
        if bad:
            lines.append("FAIL: risk-bound violation detected")
    elif args.suite == "inconsistency":
        res = diagnostics.spo_1d_population_minimizer(
            [-1.0, -1.0, 4.0], [1 / 3, 1 / 3, 1 / 3]
        )
        lines.append(
            "one-dim witness c in {-1,-1,4}: "
            f"d*={res.d_star:.8f} sign(d*)={res.sign_d} "
            f"sign(mean)={res.sign_mean} sign(median)={res.sign_median}"
        )
        rng = np.random.default_rng(args.seed)
        flips = 0
        for _ in range(20):
            p = rng.dirichlet(np.ones(3))
            out = diagnostics.multiclass_spo_minimizer(p)
            if out.is_constant_optimal:
                flips += 1
            lines.append(
                f"multiclass p={np.round(p, 4).tolist()} value={out.value:.6f} "
                f"constant_optimal={out.is_constant_optimal}"
            )
        lines.append(f"{flips}/20 draws had an uninformative constant minimizer")
    elif args.suite == "density":
        csv_path = os.path.join(args.out, "density.csv")
        with open(csv_path, "w") as fh:
            fh.write("eps,k,alpha,mass,mean,margin\n")
            for k in (1, 10, 100, 1000):
                den = diagnostics.prop1_density(1.0, k)
                fh.write(
                    f"1,{k},{den.alpha:.17g},{den.total_mass():.17g},"
                    f"{den.mean():.17g},{den.margin():.17g}\n"
                )
        lines.append(f"density table written to {csv_path}")
    else:
        raise ConfigError(f"unknown suite {args.suite!r}")
    summary = os.path.join(args.out, f"{args.suite}_summary.txt")
    with open(summary, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    print("\n".join(lines))
    return 0


def _cmd_emit_mip(args) -> int:
    rng = np.random.default_rng(args.seed)
    if args.kind == "reg-knapsack":
        dom = datagen.gen_knapsack_instance(args.m, rng)
        V0 = rng.integers(0, 2, size=(args.m, args.k)).astype(float)
        params = datagen.KnapsackGenParams(
            m=args.m, k=args.k, seed=args.seed, eps_bar=0.1
        )
        W, C = datagen.gen_knapsack_data(params, V0, args.n)
        mipgen.emit_reg_gap_erm((W, C), dom, args.lam, args.vbox, path=args.out)
    elif args.kind == "multiclass-spo":
        params = datagen.LogitGenParams(m=args.m, k=args.k, seed=args.seed)
        data = datagen.gen_multiclass_data(params, args.n)
        mipgen.emit_multiclass_spo_lp((data.W, data.C), args.m, path=args.out)
    else:
        raise ConfigError(f"unknown model kind {args.kind!r}")
    print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="predopt",
        description="Prediction-and-optimization experiments and diagnostics",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment from a config file")
    p_run.add_argument("--config", required=True, help="TOML or JSON config")
    p_run.add_argument("--out", default=None, help="override output directory")
    p_run.set_defaults(func=_cmd_run)

    p_diag = sub.add_parser("diagnostics", help="run a diagnostics suite")
    p_diag.add_argument(
        "--suite", required=True, choices=["bounds", "inconsistency", "density"]
    )
    p_diag.add_argument("--out", default=".", help="output directory")
    p_diag.add_argument("--seed", type=int, default=0)
    p_diag.set_defaults(func=_cmd_diagnostics)

    p_mip = sub.add_parser("emit-mip", help="emit a model file for external solvers")
    p_mip.add_argument(
        "--kind", required=True, choices=["reg-knapsack", "multiclass-spo"]
    )
    p_mip.add_argument("--out", required=True, help="output model file")
    p_mip.add_argument("--m", type=int, default=2)
    p_mip.add_argument("--k", type=int, default=2)
    p_mip.add_argument("--n", type=int, default=3)
    p_mip.add_argument("--lam", type=float, default=0.01)
    p_mip.add_argument("--vbox", type=float, default=1.0)
    p_mip.add_argument("--seed", type=int, default=0)
    p_mip.set_defaults(func=_cmd_emit_mip)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
