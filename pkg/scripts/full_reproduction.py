"""Full simulation grid: all designs, n in {250, 500, 1000}, both dimension regimes.

Not part of the test suite. At 500 replications and d = n the high-dimensional
cells take many CPU-hours; use --regimes moderate or fewer --reps for a
partial run. One CSV per (model, n, regime) is written to --out-dir.
"""

import argparse
import sys
import time
from pathlib import Path

from dprelevant.simulate import ExperimentConfig, build_tau, default_dimension, \
    run_power_experiment, write_csv


def _floats(text):
    return [float(v) for v in text.split(",")]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out-dir", default="reproduction")
    ap.add_argument("--models", default="F1,F2,U1,U2")
    ap.add_argument("--n", default="250,500,1000")
    ap.add_argument("--regimes", default="moderate,high")
    ap.add_argument("--rho", type=_floats, default=[0.1, 0.25, 1.0])
    ap.add_argument("--grid", type=_floats,
                    default=[round(0.95 - 0.05 * i, 2) for i in range(19)])
    ap.add_argument("--reps", type=int, default=500)
    ap.add_argument("--B", type=int, default=500)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for model_name in args.models.split(","):
        for n in (int(v) for v in args.n.split(",")):
            for regime in args.regimes.split(","):
                d = default_dimension(n) if regime == "moderate" else n
                # the concentration baseline is only compared in the moderate F1 setting
                methods = ("p-hd-u", "hoeffding") if (model_name, regime) == ("F1", "moderate") \
                    else ("p-hd-u",)
                cfg = ExperimentConfig(build_tau(model_name, d), n, args.rho, args.grid,
                                       B=args.B, reps=args.reps, seed=args.seed,
                                       methods=methods,
                                       # U1's sin-mapped matrix is indefinite for large d
                                       psd_tol=None if regime == "high" else 1e-6)
                start = time.perf_counter()
                rows = run_power_experiment(cfg)
                path = out_dir / f"{model_name}_n{n}_{regime}.csv"
                with open(path, "w", newline="") as fh:
                    write_csv(rows, fh)
                print(f"{path} ({time.perf_counter() - start:.0f}s)", file=sys.stderr)


if __name__ == "__main__":
    main()
