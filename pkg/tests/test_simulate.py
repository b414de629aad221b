import io
import math

import numpy as np
import pytest

from dprelevant.simulate import DesignError, ExperimentConfig, build_tau, copula_covariance, \
    custom_tau, default_dimension, repair_correlation, run_power_experiment, sample_copula, \
    write_csv
from dprelevant.ustat import compute_ustat, kendall_kernel


def _offdiag(tau):
    return tau[np.triu_indices(tau.shape[0], 1)]


def test_design_examples():
    f2 = build_tau("F2", 5)
    assert np.sum(_offdiag(f2.tau) == 0.5) == 3 and f2.signal == 0.5
    f1 = build_tau("F1", 4)
    assert np.sum(_offdiag(f1.tau) == 0.5) == 1 and f1.tau[0, 1] == 0.5
    u1 = build_tau("U1", 10)
    assert np.max(_offdiag(u1.tau)) == pytest.approx(0.5, abs=1e-12)
    u2 = build_tau("U2", 10)
    assert u2.tau[0, 1] == 0.5 and u2.tau[8, 9] == 0.25 and u2.tau[0, 9] == 0.0
    for tau in (f1, f2, u1, u2):
        assert np.all(np.diag(tau.tau) == 1) and np.array_equal(tau.tau, tau.tau.T)


def test_design_errors():
    with pytest.raises(DesignError):
        build_tau("F2", 2)
    with pytest.raises(DesignError):
        build_tau("F1", 2)
    with pytest.raises(DesignError):
        build_tau("X", 10)
    with pytest.raises(DesignError):
        custom_tau([[1.0, 0.5], [0.4, 1.0]])


def test_builtin_designs_psd_at_moderate_scale():
    for name in ("F1", "F2", "U1", "U2"):
        copula_covariance(build_tau(name, default_dimension(1000)))


def test_u1_indefinite_in_high_dimension_is_reported():
    model = build_tau("U1", 1000)
    with pytest.raises(DesignError):
        copula_covariance(model)
    gamma = copula_covariance(model, psd_tol=None)
    assert np.allclose(np.diag(gamma), 1.0)
    assert np.linalg.eigvalsh(gamma).min() > -1e-8


def test_repair_correlation_noop_for_psd():
    g = np.array([[1.0, 0.3], [0.3, 1.0]])
    fixed, dist = repair_correlation(g)
    assert dist == 0.0 and fixed is g


def test_identity_gives_independent_columns():
    n = 2000
    x = sample_copula(custom_tau(np.eye(4)), n, np.random.default_rng(0))
    U = compute_ustat(x, kendall_kernel(4)).U
    assert np.all(np.abs(U) < 3 / math.sqrt(n))


def test_sin_map_recovers_tau():
    x = sample_copula(build_tau("F2", 5), 5000, np.random.default_rng(1))
    assert compute_ustat(x, kendall_kernel(5)).U[0] == pytest.approx(0.5, abs=0.03)
    for gamma in (0.0, 0.5, 0.9):
        tau = 2 / math.pi * math.asin(gamma)
        m = custom_tau([[1.0, tau], [tau, 1.0]])
        x = sample_copula(m, 5000, np.random.default_rng(2))
        assert np.corrcoef(x.T)[0, 1] == pytest.approx(gamma, abs=0.03)
        assert compute_ustat(x, kendall_kernel(2)).U[0] == pytest.approx(tau, abs=0.03)


def test_sampling_is_reproducible():
    m = build_tau("F1", 8)
    a = sample_copula(m, 50, np.random.default_rng(4))
    b = sample_copula(m, 50, np.random.default_rng(4))
    assert np.array_equal(a, b)


def test_config_validation():
    m = build_tau("F2", 5)
    with pytest.raises(ValueError):
        ExperimentConfig(m, 100, [1.0], [0.3], reps=0)
    with pytest.raises(ValueError):
        ExperimentConfig(m, 100, [1.0], [0.3, 0.4])
    with pytest.raises(ValueError):
        ExperimentConfig(m, 100, [1.0], [0.3], methods=("magic",))


def _csv(rows):
    buf = io.StringIO()
    write_csv(rows, buf)
    return buf.getvalue()


def test_power_experiment_schema_and_determinism():
    cfg = ExperimentConfig(build_tau("F2", 8), 200, [1.0], [1.5, 0.3], reps=5,
                           methods=("p-hd-u", "hoeffding", "gumbel", "nonprivate"), seed=3)
    rows = run_power_experiment(cfg)
    text = _csv(rows)
    assert text.splitlines()[0] == "model,n,d,rho,Delta,method,rejectRate,reps,seed"
    assert len(rows) == 2 * 4
    assert text == _csv(run_power_experiment(cfg))
    for row in rows:
        if row["Delta"] == 1.5:
            assert row["rejectRate"] == 0.0


def test_power_increases_with_n():
    grid = [0.45, 0.4, 0.35]
    rates = {}
    for n in (250, 1000):
        cfg = ExperimentConfig(build_tau("F2", default_dimension(n)), n, [1.0], grid, reps=40,
                               seed=1)
        rates[n] = [r["rejectRate"] for r in run_power_experiment(cfg)]
    for small, big in zip(rates[250], rates[1000]):
        assert big >= small - 0.05
