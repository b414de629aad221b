"""Acceptance criteria 1-11; each test prints one PASS/FAIL line."""

import io
import json
import math
import time

import numpy as np
import pytest
from scipy import stats

from dprelevant.cli import main
from dprelevant.extremal import clipped_gaps, gaps, p_rel
from dprelevant.hdtest import private_releases
from dprelevant.privacy import PrivacyBudget, gaussian_mechanism, ptr_lower_bound, rl_gap, \
    svt_cutoff, svt_epsilon_bound, zcdp_to_eps_delta
from dprelevant.simulate import ExperimentConfig, build_tau, custom_tau, run_power_experiment, \
    sample_copula, write_csv
from dprelevant.ustat import compute_ustat, jackknife_cov, jackknife_sensitivity, \
    kendall_kernel, ustat_sensitivity
from oracles import kendall_signsum

pytestmark = pytest.mark.slow


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\n[acceptance {number:>2}] {'PASS' if ok else 'FAIL'}: {detail}")
        assert ok, detail
    return emit


def _rates(cfg):
    return {(r["Delta"], r["method"]): r["rejectRate"] for r in run_power_experiment(cfg)}


def test_01_exactness_oracles(report):
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for inst in range(100):
        n, d = int(rng.integers(4, 51)), int(rng.integers(2, 9))
        if inst % 3 == 0:
            x = rng.integers(0, 5, (n, d)).astype(float)  # heavy ties
        else:
            x = rng.standard_normal((n, d))
        res = compute_ustat(x, kendall_kernel(d), with_leave_one_out=True)
        worst = max(worst, np.abs(res.U - kendall_signsum(x)).max())
        loo = np.array([kendall_signsum(np.delete(x, l, 0)) for l in range(n)])
        worst = max(worst, np.abs(res.leave_one_out - loo).max())
        dev = loo - res.U
        zeta = (n - 1) * dev.T @ dev
        worst = max(worst, np.abs(jackknife_cov(res).zeta - zeta).max())
    elapsed = time.perf_counter() - start
    report(1, worst <= 1e-12 and elapsed < 30,
           f"max abs error {worst:.2e} over 100 instances in {elapsed:.1f}s (tol 1e-12, < 30s)")


def test_02_sensitivity_properties(report):
    n, d = 50, 5
    kernel = kendall_kernel(d)
    rng = np.random.default_rng(7)
    s_u = ustat_sensitivity(2, 1.0, n)
    s_gap = 2 * s_u
    s_jk = jackknife_sensitivity(2, 1.0, n, kernel.output_dim)
    violations = 0
    worst = [0.0, 0.0, 0.0]
    for trial in range(200):
        latent = rng.standard_normal((n, 1))
        x = latent * rng.uniform(0, 2, d) + rng.standard_normal((n, d))
        y = x.copy()
        row = rng.integers(n)
        # alternate between random and extreme (all-max / all-min) replacements
        y[row] = [rng.standard_normal(d), np.full(d, 1e3), -np.full(d, 1e3)][trial % 3]
        rx = compute_ustat(x, kernel, with_leave_one_out=True)
        ry = compute_ustat(y, kernel, with_leave_one_out=True)
        du = max(abs(np.abs(rx.U).max() - np.abs(ry.U).max()), np.abs(rx.U - ry.U).max())
        thr = rng.uniform(0, 0.5)
        dq = max(np.abs(gaps(rx.U).q - gaps(ry.U).q).max(),
                 np.abs(clipped_gaps(rx.U, thr).q - clipped_gaps(ry.U, thr).q).max())
        dj = np.linalg.norm(jackknife_cov(rx).zeta - jackknife_cov(ry).zeta)
        worst = [max(worst[0], du / s_u), max(worst[1], dq / s_gap), max(worst[2], dj / s_jk)]
        violations += (du > s_u + 1e-12) + (dq > s_gap + 1e-12) + (dj > s_jk)
    report(2, violations == 0,
           f"{violations} violations in 200 neighbor pairs; worst ratio to bound "
           f"U {worst[0]:.3f}, gap {worst[1]:.3f}, jackknife {worst[2]:.3f}")


def test_03_svt_reference_values(report):
    p250, p1000 = 31125, math.comb(1000, 2)
    cases = [(8 / 250, 0.1, p250, 1 / 250, 24.21838), (8 / 250, 0.01, p250, 1 / 250, 449.5438),
             (8 / 1000, 0.1, p1000, 1 / 1000, 8.012233)]
    matched = {}
    for conv in ("ceil", "log"):
        vals = [svt_epsilon_bound(s, sig, sig, svt_cutoff(p, conv), p, dl)
                for s, sig, p, dl, _ in cases]
        matched[conv] = (all(abs(v / ref - 1) <= 0.01 for v, (*_, ref) in zip(vals, cases)), vals)
    ok_conv = [c for c, (ok, _) in matched.items() if ok]
    vals = matched[ok_conv[0]][1] if ok_conv else matched["ceil"][1]
    report(3, bool(ok_conv),
           f"matching cut-off convention: {ok_conv[0] if ok_conv else 'none'} "
           f"(c = ceil(ln p)); values {', '.join(f'{v:.7g}' for v in vals)}; "
           f"n=1000 case uses p = C(1000, 2)")


def test_04_zcdp_conversion(report):
    eps = zcdp_to_eps_delta(1.0, 1 / 250)
    report(4, 5.2 <= eps <= 6.2, f"rho=1, delta=1/250 -> eps={eps:.4f} (want [5.2, 6.2])")


def test_05_gap_identification(report):
    start = time.perf_counter()
    model, kernel = build_tau("F2", 45), kendall_kernel(45)
    hits = 0
    for rep in range(200):
        x = sample_copula(model, 1000, np.random.default_rng([5, rep, 0]))
        U = compute_ustat(x, kernel).U
        est = p_rel(U, 2, 1.0, 1000, 1.0, 1e-3, np.random.default_rng([5, rep, 1]))
        hits += est.indices == (0, 1, 2)
    elapsed = time.perf_counter() - start
    report(5, hits / 200 >= 0.9 and elapsed < 300,
           f"exact planted set in {hits}/200 reps ({hits / 2:.1f}%, want >= 90%) "
           f"in {elapsed:.0f}s")


@pytest.fixture(scope="module")
def f2_rates():
    cfg = ExperimentConfig(build_tau("F2", 45), 1000, [1.0], [0.65, 0.5, 0.35], alpha=0.05,
                           B=200, reps=200, seed=6)
    start = time.perf_counter()
    rates = _rates(cfg)
    return rates, time.perf_counter() - start


def test_06_boundary_size(report, f2_rates):
    rate = f2_rates[0][(0.5, "p-hd-u")]
    report(6, rate <= 0.09, f"F2, Delta=0.5: rejection {rate:.3f} (want <= 0.09)")


def test_07_power(report, f2_rates):
    start = time.perf_counter()
    cfg = ExperimentConfig(build_tau("F1", 45), 1000, [1.0], [0.65, 0.35], reps=200, seed=7)
    f1 = _rates(cfg)
    elapsed = time.perf_counter() - start + f2_rates[1]
    f2 = f2_rates[0]
    vals = {"F2@0.35": f2[(0.35, "p-hd-u")], "F1@0.35": f1[(0.35, "p-hd-u")],
            "F2@0.65": f2[(0.65, "p-hd-u")], "F1@0.65": f1[(0.65, "p-hd-u")]}
    ok = (vals["F2@0.35"] >= 0.9 and vals["F1@0.35"] >= 0.9 and vals["F2@0.65"] <= 0.05
          and vals["F1@0.65"] <= 0.05 and elapsed < 900)
    report(7, ok, ", ".join(f"{k} {v:.3f}" for k, v in vals.items())
           + f" (power >= 0.90, far null <= 0.05) in {elapsed:.0f}s")


def test_08_dominance_over_hoeffding(report):
    grid = [0.5, 0.45, 0.4, 0.35, 0.3]
    cfg = ExperimentConfig(build_tau("F1", 32), 500, [0.1], grid, reps=200, seed=8,
                           methods=("p-hd-u", "hoeffding"))
    r = _rates(cfg)
    ours = [r[(g, "p-hd-u")] for g in grid]
    base = [r[(g, "hoeffding")] for g in grid]
    gaps_ = [a - b for a, b in zip(ours, base)]
    ok = all(g >= 0 for g in gaps_) and max(gaps_) >= 0.3
    report(8, ok, "Delta " + " ".join(f"{g:.2f}:{a:.3f}/{b:.3f}"
                                      for g, a, b in zip(grid, ours, base))
           + f" (ours/hoeffding); max excess {max(gaps_):.3f}")


def test_09_gumbel_branch_size(report):
    cfg = ExperimentConfig(custom_tau(np.eye(45)), 500, [1.0], [0.2], reps=200, seed=9,
                           methods=("gumbel",))
    rate = _rates(cfg)[(0.2, "gumbel")]
    report(9, rate <= 0.08, f"theta=0, p=990, Delta=0.2, forced Gumbel: rejection {rate:.3f} "
                            f"(want <= 0.08)")


def test_10_mechanism_distributions(report):
    rng = np.random.default_rng(10)
    rel = gaussian_mechanism(np.zeros(10 ** 5), 0.3, 0.5, rng)
    ks = stats.kstest(rel.value, stats.norm(scale=rel.sigma).cdf).pvalue
    mismatches = 0
    for i in range(500):
        q = rng.standard_normal(int(rng.integers(1, 50)))
        nu = (lambda j: 0.1 * np.cos(j)) if i % 2 else None
        score = q + (0.1 * np.cos(np.arange(1, q.size + 1)) if nu else 0.0)
        mismatches += rl_gap(q, math.inf, 1.0, rng, nu) != int(np.argmax(score))
    t, delta = 0.016, 0.05
    passes = sum(ptr_lower_bound(t, t, 1.0, delta, rng)[0] for _ in range(10 ** 4))
    ok = ks > 0.01 and mismatches == 0 and passes / 10 ** 4 <= delta + 0.01
    report(10, ok, f"Gaussian KS p={ks:.3f}; noiseless RL-GAP mismatches {mismatches}/500; "
                   f"PTR false-pass {passes / 10 ** 4:.4f} (want <= {delta + 0.01:.2f})")


def test_11_determinism_and_ledger(report, tmp_path, capsys):
    x = sample_copula(build_tau("F2", 20), 600, np.random.default_rng(11))
    data = tmp_path / "d.csv"
    np.savetxt(data, x, delimiter=",")
    outs = []
    for _ in range(2):
        main(["test", "--delta", "0.5,0.4,0.3", "--seed", "5", str(data)])
        outs.append(capsys.readouterr().out)
    csvs = []
    for _ in range(2):
        cfg = ExperimentConfig(build_tau("F1", 12), 300, [0.5, 1.0], [0.4, 0.2], reps=4, seed=2,
                               methods=("p-hd-u", "hoeffding", "gumbel"))
        buf = io.StringIO()
        write_csv(run_power_experiment(cfg), buf)
        csvs.append(buf.getvalue())
    over = 0
    runs = 0
    for design in ("F1", "F2", "U1", "U2"):
        xd = sample_copula(build_tau(design, 20), 400, np.random.default_rng(1))
        for branch in ("auto", "gumbel", "hoeffding", "finite"):
            for seed in range(5):
                b = PrivacyBudget(0.8, 0.005)
                private_releases(xd, kendall_kernel(20), 0.05, 0.8, 0.005, 200,
                                 np.random.default_rng(seed), b, branch=branch)
                runs += 1
                over += b.spent_rho > b.rho or b.spent_delta > b.delta
    ledger = json.loads(outs[0])["ledger"]
    over += ledger["spent"]["rho"] > ledger["rho"] or ledger["spent"]["delta"] > ledger["delta"]
    ok = outs[0] == outs[1] and csvs[0] == csvs[1] and over == 0
    report(11, ok, f"CLI JSON identical: {outs[0] == outs[1]}; CSV identical: "
                   f"{csvs[0] == csvs[1]}; ledgers over budget: {over}/{runs + 1}")
