"""Command-line entry point.

Subcommands: test, scan, extremal, simulate, svt-cost. `--verify FILE`
re-derives the decisions recorded in a JSON result from its releases.

Exit codes: 0 completed run, 1 verification mismatch, 2 usage error,
3 budget violation, 4 data error.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from typing import List, Optional

import numpy as np

from dprelevant import __version__
from dprelevant.extremal import p_rel, relevant_set
from dprelevant.hdtest import PrivateReleases, private_releases, scan_releases
from dprelevant.privacy import BudgetExceededError, PrivacyBudget, svt_cutoff, \
    svt_epsilon_bound
from dprelevant.simulate import DESIGNS, METHODS, DesignError, ExperimentConfig, build_tau, \
    default_dimension, run_power_experiment, write_csv
from dprelevant.ustat import DataError, compute_ustat, kendall_kernel, load_csv, tie_jitter

EXIT_OK, EXIT_MISMATCH, EXIT_USAGE, EXIT_BUDGET, EXIT_DATA = 0, 1, 2, 3, 4

DEFAULT_SCAN_GRID = [round(0.99 - 0.01 * i, 2) for i in range(99)]


class UsageError(Exception):
    pass


def _float_list(text: str) -> List[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")
    if not values:
        raise argparse.ArgumentTypeError("empty list")
    return values


def _add_data_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("data", help="CSV file, one observation per row, optional header")
    p.add_argument("--kernel", choices=["kendall"], default="kendall")
    p.add_argument("--band", type=int, default=None, metavar="M",
                   help="keep only column pairs (i, j) with j - i >= M")
    p.add_argument("--jitter", type=float, default=None, metavar="SD",
                   help="add N(0, SD^2) noise to break ties before ranking")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rho", type=float, default=1.0, help="zCDP budget")
    p.add_argument("--dp-delta", type=float, default=None,
                   help="approximate-zCDP delta (default 1/n)")
    p.add_argument("--budget-config", default=None, metavar="JSON",
                   help='declared budget {"rho": .., "delta": ..}; defaults to --rho/--dp-delta')
    p.add_argument("--out", default=None, help="write JSON here instead of standard output")


def _add_test_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--B", type=int, default=200, help="bootstrap draws")
    p.add_argument("--gamma", type=float, default=0.0)
    p.add_argument("--branch", choices=["auto", "gumbel", "hoeffding", "finite"],
                   default="auto")
    p.add_argument("--gap-budget-fraction", type=float, default=1.0 / 3.0,
                   help="share of rho spent on the extremal-set estimate")
    p.add_argument("--variance-form", choices=["squared", "linear"], default="squared")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dprelevant", description="Private tests of relevant hypotheses for U-statistics.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("--verify", metavar="FILE",
                        help="re-derive the decisions recorded in a JSON result")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("test", help="test H0(delta) at one threshold or a grid")
    _add_data_args(p)
    _add_test_args(p)
    p.add_argument("--delta", type=_float_list, required=True,
                   help="threshold, or comma-separated descending grid")

    p = sub.add_parser("scan", help="smallest grid threshold that is not rejected")
    _add_data_args(p)
    _add_test_args(p)
    p.add_argument("--grid", type=_float_list, default=None,
                   help="descending comma-separated grid (default 0.99 .. 0.01)")

    p = sub.add_parser("extremal", help="private extremal-set estimate")
    _add_data_args(p)
    p.add_argument("--threshold", type=float, default=None,
                   help="estimate {i : |theta_i| > threshold} instead of the extremal set")

    p = sub.add_parser("simulate", help="Monte-Carlo power experiment, CSV output")
    p.add_argument("--model", choices=DESIGNS, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--d", type=int, default=None, help="dimension (default ceil(sqrt(2n)))")
    p.add_argument("--rho", type=_float_list, default=[1.0])
    p.add_argument("--delta-grid", type=_float_list, required=True)
    p.add_argument("--reps", type=int, default=200)
    p.add_argument("--B", type=int, default=200)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--dp-delta", type=float, default=None)
    p.add_argument("--methods", default="p-hd-u",
                   help=f"comma-separated subset of {','.join(METHODS)}")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="CSV path (default standard output)")

    p = sub.add_parser("svt-cost", help="epsilon(delta) bound of the Gaussian sparse vector")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--p", type=int, default=None, help="number of queries (default C(n, 2))")
    p.add_argument("--sigma", type=float, default=None, help="sets both noise levels")
    p.add_argument("--sigma1", type=float, default=None)
    p.add_argument("--sigma2", type=float, default=None)
    p.add_argument("--dp-delta", type=float, default=None, help="default 1/n")
    p.add_argument("--order", type=int, default=2)
    p.add_argument("--bound", type=float, default=1.0)
    p.add_argument("--convention", choices=["ceil", "log"], default="ceil")
    return parser


def _emit(payload: dict, out: Optional[str]) -> None:
    text = json.dumps(payload, indent=2, ensure_ascii=False) + "\n"
    if out is None:
        sys.stdout.write(text)
    else:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)


def _load(args, rng):
    try:
        x = load_csv(args.data)
    except FileNotFoundError:
        raise DataError(f"{args.data}: no such file") from None
    except OSError as exc:
        raise DataError(f"{args.data}: {exc.strerror}") from None
    if args.jitter is not None:
        x = tie_jitter(x, args.jitter, rng.spawn(1)[0])
    try:
        kernel = kendall_kernel(x.shape[1], args.band)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    return x, kernel


def _budget(args, n: int):
    if not args.rho > 0:
        raise UsageError("--rho must be positive")
    delta = args.dp_delta if args.dp_delta is not None else 1.0 / n
    if not 0 < delta < 1:
        raise UsageError("--dp-delta must lie in (0, 1)")
    if args.budget_config is None:
        return PrivacyBudget(args.rho, delta), delta
    try:
        with open(args.budget_config, encoding="utf-8") as fh:
            cfg = json.load(fh)
        declared = PrivacyBudget(float(cfg["rho"]), float(cfg.get("delta", 0.0)))
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise UsageError(f"bad budget config {args.budget_config}: {exc}") from None
    # refuse up front so a violating run releases nothing at all
    if args.rho > declared.rho or delta > declared.delta:
        raise BudgetExceededError(
            f"requested (rho={args.rho:g}, delta={delta:g}) exceeds declared "
            f"(rho={declared.rho:g}, delta={declared.delta:g})")
    return declared, delta


def _check_test_args(args) -> None:
    if not 0 < args.alpha < 1:
        raise UsageError("--alpha must lie in (0, 1)")
    if args.B < 1:
        raise UsageError("--B must be >= 1")
    if not 0 < args.gap_budget_fraction < 1:
        raise UsageError("--gap-budget-fraction must lie in (0, 1)")


def _releases_dict(rel: PrivateReleases) -> dict:
    return {
        "branch": rel.branch, "normDP": rel.norm_dp, "n": rel.n, "p": rel.p,
        "order": rel.order, "bound": rel.bound, "alpha": rel.alpha, "gamma": rel.gamma,
        "varianceForm": rel.variance_form, "baseQuantile": rel.quantile,
    }


def _releases_from_dict(d: dict) -> PrivateReleases:
    return PrivateReleases(d["branch"], d["normDP"], d["n"], d["p"], d["order"], d["bound"],
                           d["alpha"], quantile=d["baseQuantile"], gamma=d["gamma"],
                           variance_form=d["varianceForm"])


def _result(rel: PrivateReleases, grid: List[float], single: bool) -> dict:
    scan = scan_releases(rel, grid)
    return {
        "decision": ("reject" if scan.decisions[0] else "accept") if single
        else ["reject" if r else "accept" for r in scan.decisions],
        "branch": rel.branch,
        "delta": grid[0] if single else grid,
        "deltaHat": None if single else scan.delta_hat,
        "normDP": rel.norm_dp,
        "quantile": scan.criticals[0] if single else scan.criticals,
        "extremal": None if rel.extremal is None else rel.extremal.to_dict(),
        "ledger": rel.budget.to_dict(),
        "releases": _releases_dict(rel),
    }


def _run_test(args, grid: List[float], single: bool) -> int:
    _check_test_args(args)
    if any(a < b for a, b in zip(grid, grid[1:])):
        raise UsageError("the threshold grid must be descending")
    rng = np.random.default_rng(args.seed)
    x, kernel = _load(args, rng)
    budget, delta = _budget(args, x.shape[0])
    rel = private_releases(x, kernel, args.alpha, args.rho, delta, args.B, rng, budget,
                           branch=args.branch, gap_fraction=args.gap_budget_fraction,
                           gamma=args.gamma, variance_form=args.variance_form)
    payload = _result(rel, grid, single)
    _emit(payload, args.out)
    if single:
        summary = f"{payload['decision']} H0(delta={grid[0]:g}) via {rel.branch} branch"
    else:
        summary = f"deltaHat={payload['deltaHat']:g} via {rel.branch} branch"
    print(f"{summary}; spent rho={budget.spent_rho:.6g}, delta={budget.spent_delta:.6g}",
          file=sys.stderr)
    return EXIT_OK


def _run_extremal(args) -> int:
    rng = np.random.default_rng(args.seed)
    x, kernel = _load(args, rng)
    budget, delta = _budget(args, x.shape[0])
    n = x.shape[0]
    U = compute_ustat(x, kernel).U
    if U.size < 2:
        raise DataError("the extremal-set estimate needs at least two coordinates")
    if args.threshold is None:
        est = p_rel(U, kernel.order, kernel.bound, n, args.rho, delta, rng, budget)
    else:
        if not args.threshold > 0:
            raise UsageError("--threshold must be positive")
        est = relevant_set(U, args.threshold, kernel.order, kernel.bound, n, args.rho, delta,
                           rng, budget)
    payload = est.to_dict()
    payload["ledger"] = budget.to_dict()
    _emit(payload, args.out)
    return EXIT_OK


def _run_simulate(args) -> int:
    methods = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    d = args.d if args.d is not None else default_dimension(args.n)
    try:
        model = build_tau(args.model, d)
        cfg = ExperimentConfig(model, args.n, args.rho, args.delta_grid, alpha=args.alpha,
                               B=args.B, reps=args.reps, seed=args.seed,
                               dp_delta=args.dp_delta, methods=methods)
    except (DesignError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    rows = run_power_experiment(cfg)
    if args.out is None:
        write_csv(rows, sys.stdout)
    else:
        with open(args.out, "w", newline="", encoding="utf-8") as fh:
            write_csv(rows, fh)
    return EXIT_OK


def _run_svt_cost(args) -> int:
    sigma1 = args.sigma1 if args.sigma1 is not None else args.sigma
    sigma2 = args.sigma2 if args.sigma2 is not None else args.sigma
    if sigma1 is None or sigma2 is None:
        raise UsageError("give --sigma or both --sigma1 and --sigma2")
    if args.n < 2:
        raise UsageError("--n must be >= 2")
    p = args.p if args.p is not None else math.comb(args.n, 2)
    delta = args.dp_delta if args.dp_delta is not None else 1.0 / args.n
    sensitivity = 4.0 * args.order * args.bound / args.n
    try:
        c = svt_cutoff(p, args.convention)
        eps = svt_epsilon_bound(sensitivity, sigma1, sigma2, c, p, delta)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    _emit({"epsilon": eps, "n": args.n, "p": p, "c": c, "convention": args.convention,
           "sensitivity": sensitivity, "sigma1": sigma1, "sigma2": sigma2, "delta": delta},
          None)
    return EXIT_OK


def verify(path: str) -> int:
    try:
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
        rel = _releases_from_dict(payload["releases"])
        recorded = payload["decision"]
        thresholds = payload["delta"]
    except FileNotFoundError:
        raise DataError(f"{path}: no such file") from None
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise DataError(f"{path}: not a test result ({exc})") from None
    single = not isinstance(thresholds, list)
    grid = [thresholds] if single else thresholds
    redone = _result(rel, grid, single)["decision"]
    if redone != recorded:
        print(f"mismatch: recorded {recorded}, re-derived {redone}", file=sys.stderr)
        return EXIT_MISMATCH
    print(f"verified: {len(grid)} decision(s) reproduced from the releases", file=sys.stderr)
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        if args.verify is not None:
            if args.command is not None:
                raise UsageError("--verify takes no subcommand")
            return verify(args.verify)
        if args.command is None:
            parser.print_usage(sys.stderr)
            return EXIT_USAGE
        if args.command == "test":
            return _run_test(args, args.delta, single=len(args.delta) == 1)
        if args.command == "scan":
            return _run_test(args, args.grid or DEFAULT_SCAN_GRID, single=False)
        if args.command == "extremal":
            return _run_extremal(args)
        if args.command == "simulate":
            return _run_simulate(args)
        return _run_svt_cost(args)
    except UsageError as exc:
        print(f"dprelevant: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except BudgetExceededError as exc:
        print(f"dprelevant: budget violation: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except DataError as exc:
        print(f"dprelevant: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
