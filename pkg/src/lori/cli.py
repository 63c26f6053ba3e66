"""Command-line interface.

Exit codes: 0 on success, 1 for invalid input or usage, 2 when a numerical
routine fails.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .exceptions import NumericalError, ValidationError
from .io import load_covariates, read_count_csv, write_count_csv, write_covariate_csv, write_results, _dump_json
from .selection import cross_validate, default_cv_grid, independence_test, null_threshold_stat, qut_select
from .simulation import SimSpec, run_estimation_benchmark, run_imputation_benchmark, simulate_dataset
from .solver import SolverConfig, fit

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _data_args(p, lam=True):
    p.add_argument("--counts", required=True, help="count table CSV (NA or empty = missing)")
    p.add_argument("--row-cov", help="row covariates CSV")
    p.add_argument("--col-cov", help="column covariates CSV")
    if lam:
        p.add_argument("--lambda", dest="lam", default="qut", help="a number, 'qut' (default) or 'cv'")
    _select_args(p)
    _solver_args(p)
    p.add_argument("--out", help="output directory")


def _select_args(p):
    p.add_argument("--epsilon", type=float, default=0.05, help="QUT level (default 0.05)")
    p.add_argument("--nboot", type=int, default=100, help="bootstrap replicates (default 100)")
    p.add_argument("--folds", type=int, default=5, help="cross-validation folds (default 5)")
    p.add_argument("--erase-frac", type=float, default=0.2, help="fraction of cells erased per fold")
    p.add_argument("--seed", type=int, default=0)


def _solver_args(p):
    p.add_argument("--tol", type=float, default=1e-6, help="relative objective tolerance")
    p.add_argument("--max-iters", type=int, default=500, help="maximum outer iterations")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lori", description="Low-rank Poisson model with covariates for count tables.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    _data_args(sub.add_parser("fit", help="fit the model and write all results"))
    _data_args(sub.add_parser("impute", help="fit the model and write imputed tables"))
    _data_args(sub.add_parser("test", help="test for interactions (theta = 0)"), lam=False)
    p = sub.add_parser("cv", help="choose lambda by cross-validation")
    _data_args(p, lam=False)
    p.add_argument("--grid", type=_floats, help="comma-separated lambda values (default: 10 values below lambda0)")

    p = sub.add_parser("simulate", help="write a simulated data set")
    _sim_args(p)
    p.add_argument("--tau", type=float, default=0.5, help="interaction-to-main-effects norm ratio")
    p.add_argument("--miss-prob", type=float, default=0.0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("bench-estimation", help="coefficient and log-mean estimation benchmark")
    _sim_args(p)
    p.add_argument("--taus", type=_floats, default=[1.0, 0.5, 0.25, 0.1, 0.0])
    p.add_argument("--reps", type=int, default=20)
    p.add_argument("--epsilon", type=float, default=0.05)
    p.add_argument("--nboot", type=int, default=100)
    _solver_args(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("bench-imputation", help="imputation benchmark against column means")
    _sim_args(p)
    p.add_argument("--tau", type=float, default=0.5)
    p.add_argument("--miss-fracs", type=_floats, default=[0.2, 0.4, 0.6, 0.8])
    p.add_argument("--reps", type=int, default=20)
    p.add_argument("--epsilon", type=float, default=0.05)
    p.add_argument("--nboot", type=int, default=100)
    _solver_args(p)
    p.add_argument("--out", required=True)
    return parser


def _sim_args(p):
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--p", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)


def _config(args) -> SolverConfig:
    return SolverConfig(tol=args.tol, max_outer_iters=args.max_iters)


def _load(args):
    table = read_count_csv(args.counts)
    return table, load_covariates(table, args.row_cov, args.col_cov)


def _select(args, table, cov, config):
    mode = args.lam.strip().lower()
    if mode == "qut":
        rep = qut_select(table, cov, config, args.epsilon, args.nboot, args.seed)
        return rep.chosen_lambda, rep
    if mode == "cv":
        grid = default_cv_grid(null_threshold_stat(table, cov, config))
        rep = cross_validate(table, cov, grid, args.erase_frac, args.folds, config, args.seed)
        return rep.chosen_lambda, rep
    try:
        lam = float(mode)
    except ValueError:
        raise ValidationError(f"--lambda must be a number, 'qut' or 'cv', got {args.lam!r}") from None
    if not np.isfinite(lam) or lam < 0:
        raise ValidationError("--lambda must be a nonnegative number")
    return lam, None


def _print(obj):
    print(json.dumps(obj, indent=2, sort_keys=True))


def _cmd_fit(args, only=None):
    if not args.out:
        raise ValidationError("--out is required")
    config = _config(args)
    table, cov = _load(args)
    lam, report = _select(args, table, cov, config)
    res = fit(table, cov, lam, config)
    reports = {"selection": report} if report is not None else None
    manifest = write_results(res, table, cov, args.out, reports, only=only)
    _print(manifest)


def _cmd_impute(args):
    _cmd_fit(args, only=("params.json", "imputed.csv", "completed.csv", "selection.json"))


def _cmd_test(args):
    config = _config(args)
    table, cov = _load(args)
    reject, lam0, threshold = independence_test(table, cov, config, args.epsilon, args.nboot, args.seed)
    out = {"lambda0": lam0, "threshold": threshold, "reject": reject, "epsilon": args.epsilon}
    print(f"lambda0={lam0:.17g}")
    print(f"threshold={threshold:.17g}")
    print(f"reject={'true' if reject else 'false'}")
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        _dump_json(out, Path(args.out) / "test.json")


def _cmd_cv(args):
    config = _config(args)
    table, cov = _load(args)
    grid = args.grid or default_cv_grid(null_threshold_stat(table, cov, config))
    rep = cross_validate(table, cov, grid, args.erase_frac, args.folds, config, args.seed)
    print(f"chosen_lambda={rep.chosen_lambda:.17g}")
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        _dump_json(rep.to_dict(), Path(args.out) / "selection.json")


def _cmd_simulate(args):
    spec = SimSpec(n=args.n, p=args.p, tau_ratio=args.tau, miss_prob=args.miss_prob, seed=args.seed)
    table, cov, truth = simulate_dataset(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    table = type(table)(table.values, table.mask, [f"site{i + 1}" for i in range(spec.n)],
                        [f"year{j + 1}" for j in range(spec.p)])
    write_count_csv(table, out / "counts.csv")
    raw_r = cov.R * cov.row_scale + cov.row_mean
    raw_c = cov.C * cov.col_scale + cov.col_mean
    write_covariate_csv(raw_r, table.row_names, cov.row_cov_names, out / "row_cov.csv")
    write_covariate_csv(raw_c, table.col_names, cov.col_cov_names, out / "col_cov.csv")
    _dump_json(
        {"spec": asdict(spec), "theta": truth.theta.tolist(), "mu": spec.mu_star,
         "alpha": list(spec.alpha_star), "beta": list(spec.beta_star)},
        out / "truth.json",
    )
    print(str(out / "counts.csv"))


def _bench_out(report, out, name):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    report.to_csv(out / f"{name}.csv")
    report.to_json(out / f"{name}.json")
    _print(report.summary)


def _cmd_bench_estimation(args):
    specs = [SimSpec(n=args.n, p=args.p, tau_ratio=t, seed=args.seed) for t in args.taus]
    report = run_estimation_benchmark(specs, args.reps, _config(args), args.epsilon, args.nboot)
    _bench_out(report, args.out, "estimation")


def _cmd_bench_imputation(args):
    spec = SimSpec(n=args.n, p=args.p, tau_ratio=args.tau, seed=args.seed)
    report = run_imputation_benchmark(spec, args.miss_fracs, args.reps, _config(args), args.epsilon, args.nboot)
    _bench_out(report, args.out, "imputation")


COMMANDS = {
    "fit": _cmd_fit,
    "impute": _cmd_impute,
    "test": _cmd_test,
    "cv": _cmd_cv,
    "simulate": _cmd_simulate,
    "bench-estimation": _cmd_bench_estimation,
    "bench-imputation": _cmd_bench_imputation,
}


def cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        COMMANDS[args.command](args)
    except (ValidationError, FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def main() -> None:
    sys.exit(cli())
