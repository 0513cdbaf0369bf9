"""Command-line front end: fit, confint, simulate, compare.

Every command is a pure function of its input files, flags and seed;
JSON output is byte-identical across repeated runs and across worker
counts, so thread count and wall-clock timing are deliberately kept
out of it.  Exit codes: 0 success, 2 usage or data error, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import data as data_mod
from . import estimation, robust
from .bootstrap import BootstrapError
from .estimation import ConvergenceError, FitResult
from .formula import FormulaError, parse_formula
from .intervals import CiOptions, IntervalError, confint
from .numerics import RandomStream

EXIT_USAGE = 2
EXIT_NUMERICAL = 3


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def _default_threads() -> int:
    env = os.environ.get("MIXEDBOOT_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _add_model_args(sub):
    sub.add_argument("--data", required=True, help="long-format CSV file")
    sub.add_argument("--formula", required=True, help='e.g. "pos ~ treat * time + (time|id)"')
    sub.add_argument("--output", choices=("text", "json"), default="text")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mixedboot",
        description="Linear mixed models with bootstrap confidence intervals.",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    p_fit = subs.add_parser("fit", help="fit a model and print the estimates")
    _add_model_args(p_fit)
    p_fit.add_argument("--method", choices=("ml", "reml", "robust"), default="ml")

    p_ci = subs.add_parser("confint", help="confidence intervals for all parameters")
    _add_model_args(p_ci)
    p_ci.add_argument("--fit-method", choices=("ml", "reml", "robust"), default="ml")
    p_ci.add_argument("--method", choices=("wald", "boot", "bca"), default="boot")
    p_ci.add_argument("--boot-type", choices=("wild", "parametric"), default="wild")
    p_ci.add_argument("--nsim", type=int, default=5000)
    p_ci.add_argument("--level", type=float, default=0.95)
    p_ci.add_argument("--parm", help="comma-separated names or 1-based indices")
    p_ci.add_argument("--cluster-id", help='cluster variable name; needed only with --method bca')
    p_ci.add_argument("--seed", type=int, default=0)
    p_ci.add_argument("--threads", type=int, default=None)
    p_ci.add_argument("--verify", help="previously saved JSON result to compare against")

    p_sim = subs.add_parser("simulate", help="simulate a dataset from a design JSON")
    p_sim.add_argument("--design", required=True, help="design JSON file")
    p_sim.add_argument("--out", required=True, help="output CSV path")
    p_sim.add_argument("--seed", type=int, default=None, help="overrides the design's seed")
    p_sim.add_argument("--output", choices=("text", "json"), default="text")

    p_cmp = subs.add_parser("compare", help="side-by-side estimates of two fits")
    _add_model_args(p_cmp)
    p_cmp.add_argument("--methods", default="ml,robust",
                       help="two comma-separated methods (ml, reml, robust)")
    p_cmp.add_argument("--confint", action="store_true", help="append a CI comparison block")
    p_cmp.add_argument("--ci-method", choices=("wald", "boot", "bca"), default="boot")
    p_cmp.add_argument("--boot-type", choices=("wild", "parametric"), default="wild")
    p_cmp.add_argument("--nsim", type=int, default=5000)
    p_cmp.add_argument("--level", type=float, default=0.95)
    p_cmp.add_argument("--cluster-id")
    p_cmp.add_argument("--seed", type=int, default=0)
    p_cmp.add_argument("--threads", type=int, default=None)
    return parser


def _load(args) -> tuple:
    try:
        formula = parse_formula(args.formula)
        dataset = data_mod.read_csv(args.data, formula)
    except (FormulaError, data_mod.DataError, OSError) as exc:
        raise CliError(str(exc), EXIT_USAGE) from exc
    return formula, dataset


def _fit(dataset, method: str) -> FitResult:
    try:
        if method == "robust":
            result = robust.fit_robust(dataset)
        else:
            result = estimation.fit(dataset, method.upper())
    except (ConvergenceError, np.linalg.LinAlgError) as exc:
        raise CliError(str(exc), EXIT_NUMERICAL) from exc
    if not result.converged:
        raise CliError(f"{method} fit did not converge", EXIT_NUMERICAL)
    return result


def _print_fit_text(result: FitResult) -> None:
    print(f"Method: {result.method}   converged: {result.converged}"
          + ("   (variance at boundary)" if result.boundary else ""))
    print("\nCoefficients (Std. Error)")
    for name, est, se in zip(result.fixed_names, result.params.gamma, result.se_gamma):
        print(f"  {name:<24} {est:>12.6g} ({se:.6g})")
    print("\nVariance components (SD scale)")
    for name, value in result.reported().items():
        if name.startswith("Sigma"):
            print(f"  {name:<32} {value:>12.6g}")
    print(f"\ndeviance {result.deviance:.6g}")
    if result.reml_criterion is not None:
        print(f"REML criterion {result.reml_criterion:.6g}")
    if result.weights is not None:
        print("\nRobustness weights (ascending)")
        order = np.argsort(result.weights, kind="stable")
        for i in order:
            print(f"  {i + 1:>4}  {result.weights[i]:.6g}")


def cmd_fit(args) -> int:
    _, dataset = _load(args)
    result = _fit(dataset, args.method)
    if args.output == "json":
        doc = {
            "command": "fit",
            "config": {"data": args.data, "formula": args.formula, "method": args.method},
            "fit": result.to_dict(),
        }
        print(json.dumps(doc, indent=2))
    else:
        _print_fit_text(result)
    return 0


def _parse_parm(text: str | None):
    if text is None:
        return None
    return tuple(part.strip() for part in text.split(",") if part.strip())


def cmd_confint(args) -> int:
    _, dataset = _load(args)
    threads = args.threads if args.threads is not None else _default_threads()
    try:
        options = CiOptions(
            method=args.method,
            boot_type=args.boot_type,
            nsim=args.nsim,
            level=args.level,
            parm=_parse_parm(args.parm),
            cluster_id=args.cluster_id,
            seed=args.seed,
            threads=threads,
        )
    except IntervalError as exc:
        raise CliError(str(exc), EXIT_USAGE) from exc
    result = _fit(dataset, args.fit_method)
    try:
        table = confint(result, dataset, options)
    except IntervalError as exc:
        raise CliError(str(exc), EXIT_USAGE) from exc
    except BootstrapError as exc:
        raise CliError(str(exc), EXIT_NUMERICAL) from exc

    doc = {
        "command": "confint",
        "config": {
            "data": args.data,
            "formula": args.formula,
            "fit_method": args.fit_method,
            "method": options.method,
            "boot_type": options.boot_type if options.method != "Wald" else None,
            "nsim": options.nsim if options.method != "Wald" else None,
            "level": options.level,
            "parm": list(options.parm) if options.parm else None,
            "cluster_id": options.cluster_id,
            "seed": options.seed,
        },
        "fit": result.to_dict(),
        "ci_table": table.to_dict(),
    }
    if args.verify:
        with open(args.verify, encoding="utf-8") as fh:
            saved = json.load(fh)
        if saved.get("ci_table") != doc["ci_table"]:
            raise CliError(f"results do not match the saved run in {args.verify}",
                           EXIT_NUMERICAL)
        print(f"verified: results match {args.verify}", file=sys.stderr)
    if args.output == "json":
        print(json.dumps(doc, indent=2))
    else:
        _print_fit_text(result)
        print()
        print(table.render())
    return 0


def cmd_simulate(args) -> int:
    try:
        with open(args.design, encoding="utf-8") as fh:
            design, seed = data_mod.design_from_json(json.load(fh))
    except (OSError, KeyError, ValueError) as exc:
        raise CliError(f"invalid design: {exc}", EXIT_USAGE) from exc
    if args.seed is not None:
        seed = args.seed
    dataset = data_mod.simulate_dataset(design, RandomStream(seed))
    data_mod.write_csv(dataset, args.out)
    truth = estimation.to_reported(design.truth, dataset.fixed_names,
                                   dataset.random_names, dataset.cluster_var)
    if args.output == "json":
        doc = {
            "command": "simulate",
            "config": {"design": args.design, "out": args.out, "seed": seed},
            "truth": truth,
            "n_clusters": dataset.n,
            "n_rows": dataset.N,
        }
        print(json.dumps(doc, indent=2))
    else:
        print(f"wrote {dataset.N} rows ({dataset.n} clusters) to {args.out}")
        print("truth on the reported scale:")
        for name, value in truth.items():
            print(f"  {name:<32} {value:>12.6g}")
    return 0


def cmd_compare(args) -> int:
    methods = [m.strip() for m in args.methods.split(",")]
    if len(methods) != 2 or any(m not in ("ml", "reml", "robust") for m in methods):
        raise CliError("--methods must name two of: ml, reml, robust", EXIT_USAGE)
    _, dataset = _load(args)
    fits = [_fit(dataset, m) for m in methods]

    headers = [f.method for f in fits]
    print(f"{'':<34} {headers[0]:>22} {headers[1]:>22}")
    print("Coefficients (Std. Error)")
    for j, name in enumerate(fits[0].fixed_names):
        cells = [f"{f.params.gamma[j]:.4g} ({f.se_gamma[j]:.4g})" for f in fits]
        print(f"  {name:<32} {cells[0]:>22} {cells[1]:>22}")
    print("Variance components")
    reported = [f.reported() for f in fits]
    for name in reported[0]:
        if name.startswith("Sigma"):
            print(f"  {name:<32} {reported[0][name]:>22.6g} {reported[1][name]:>22.6g}")

    if args.confint:
        threads = args.threads if args.threads is not None else _default_threads()
        try:
            options = CiOptions(method=args.ci_method, boot_type=args.boot_type,
                                nsim=args.nsim, level=args.level,
                                cluster_id=args.cluster_id, seed=args.seed,
                                threads=threads)
            tables = [confint(f, dataset, options) for f in fits]
        except IntervalError as exc:
            raise CliError(str(exc), EXIT_USAGE) from exc
        except BootstrapError as exc:
            raise CliError(str(exc), EXIT_NUMERICAL) from exc
        print(f"\nConfidence intervals ({options.method}"
              + (f", {options.boot_type}" if options.method != "Wald" else "") + ")")
        for row0, row1 in zip(tables[0].rows, tables[1].rows):
            print(f"  {row0[0]:<32} [{row0[1]:.6g}, {row0[2]:.6g}]"
                  f"  [{row1[1]:.6g}, {row1[2]:.6g}]")
    return 0


_COMMANDS = {"fit": cmd_fit, "confint": cmd_confint, "simulate": cmd_simulate,
             "compare": cmd_compare}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else 0
    try:
        return _COMMANDS[args.command](args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (FormulaError, data_mod.DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConvergenceError, BootstrapError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
