"""Gaussian-copula simulation designs and the Monte-Carlo power experiment.

Data are drawn from N_d(0, Γ) with Γ_ij = sin(π τ_ij / 2), so the population
Kendall's tau matrix of the sample is exactly the design matrix τ.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence

import numpy as np

from dprelevant.hdtest import hoeffding_test, private_releases
from dprelevant.ustat import compute_ustat, kendall_kernel

DESIGNS = ("F1", "F2", "U1", "U2")
CSV_FIELDS = ("model", "n", "d", "rho", "Delta", "method", "rejectRate", "reps", "seed")


class DesignError(ValueError):
    pass


@dataclass
class TauModel:
    name: str
    tau: np.ndarray

    @property
    def d(self) -> int:
        return self.tau.shape[0]

    @property
    def signal(self) -> float:
        """max_{i<j} |τ_ij|."""
        iu = np.triu_indices(self.d, 1)
        return float(np.max(np.abs(self.tau[iu]))) if self.d > 1 else 0.0


def default_dimension(n: int) -> int:
    """Moderate-dimensional choice d = ceil(sqrt(2n)), giving p ≈ n pairs."""
    return math.ceil(math.sqrt(2 * n))


def build_tau(name: str, d: int) -> TauModel:
    """Kendall-tau design matrix for one of the designs F1, F2, U1, U2."""
    m = math.floor(d / math.sqrt(2))
    tau = np.eye(d)
    if name == "F1":
        if m < 2:
            raise DesignError(f"F1 needs floor(d/sqrt(2)) >= 2, got d={d}")
        tau[:m, :m] = 0.5
    elif name == "F2":
        if d < 3:
            raise DesignError(f"F2 needs d >= 3, got d={d}")
        tau[:3, :3] = 0.5
    elif name == "U1":
        if m < 2:
            raise DesignError(f"U1 needs floor(d/sqrt(2)) >= 2, got d={d}")
        b = 0.01 + np.arange(m) * (0.99 - 0.01) / (m - 1)
        # b is increasing, so the largest off-diagonal product is b[-2] * b[-1]
        a = math.sqrt(0.5 / (b[-2] * b[-1])) * b
        tau[:m, :m] = np.outer(a, a)
    elif name == "U2":
        if m < 2:
            raise DesignError(f"U2 needs floor(d/sqrt(2)) >= 2, got d={d}")
        tau[:m, :m] = 0.5
        tau[m:, m:] = 0.25
    else:
        raise DesignError(f"unknown design {name!r}; expected one of {DESIGNS}")
    np.fill_diagonal(tau, 1.0)
    return TauModel(name, tau)


def custom_tau(tau) -> TauModel:
    tau = np.asarray(tau, dtype=np.float64)
    if tau.ndim != 2 or tau.shape[0] != tau.shape[1]:
        raise DesignError("tau must be a square matrix")
    if not np.allclose(tau, tau.T) or not np.allclose(np.diag(tau), 1.0):
        raise DesignError("tau must be symmetric with unit diagonal")
    if np.any(np.abs(tau) > 1):
        raise DesignError("tau entries must lie in [-1, 1]")
    return TauModel("custom", tau)


def repair_correlation(gamma) -> tuple[np.ndarray, float]:
    """Clip negative eigenvalues, rescale to unit diagonal; returns (matrix, Frobenius shift)."""
    w, v = np.linalg.eigh(gamma)
    if w.min() >= 0:
        return gamma, 0.0
    fixed = (v * np.clip(w, 0.0, None)) @ v.T
    s = np.sqrt(np.diag(fixed))
    fixed = fixed / np.outer(s, s)
    fixed = 0.5 * (fixed + fixed.T)
    return fixed, float(np.linalg.norm(fixed - gamma))


def copula_covariance(model: TauModel, psd_tol: Optional[float] = 1e-6) -> np.ndarray:
    """Γ = sin(π τ / 2), repaired to PSD; raises if the repair moves it more than `psd_tol`."""
    gamma = np.sin(np.pi * model.tau / 2.0)
    fixed, dist = repair_correlation(gamma)
    if psd_tol is not None and dist > psd_tol:
        raise DesignError(
            f"{model.name}: sin-mapped tau is indefinite (repair distance {dist:.3g})")
    return fixed


def sample_copula(model: TauModel, n: int, rng: np.random.Generator,
                  psd_tol: Optional[float] = 1e-6) -> np.ndarray:
    """n i.i.d. rows of N_d(0, Γ) whose population Kendall's tau equals model.tau."""
    gamma = copula_covariance(model, psd_tol)
    try:
        chol = np.linalg.cholesky(gamma)
    except np.linalg.LinAlgError:
        w, v = np.linalg.eigh(gamma)
        chol = v * np.sqrt(np.clip(w, 0.0, None))
    return rng.standard_normal((n, model.d)) @ chol.T


@dataclass
class ExperimentConfig:
    model: TauModel
    n: int
    rho_list: Sequence[float]
    delta_grid: Sequence[float]
    alpha: float = 0.05
    B: int = 200
    reps: int = 200
    seed: int = 0
    dp_delta: Optional[float] = None
    methods: Sequence[str] = ("p-hd-u",)
    gamma: float = 0.0
    gap_fraction: float = 1.0 / 3.0
    psd_tol: Optional[float] = 1e-6

    def __post_init__(self):
        if self.reps < 1:
            raise ValueError("reps must be >= 1")
        grid = list(self.delta_grid)
        if any(a < b for a, b in zip(grid, grid[1:])):
            raise ValueError("delta grid must be descending")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ValueError(f"unknown methods {sorted(unknown)}")

    @property
    def d(self) -> int:
        return self.model.d


METHODS = ("p-hd-u", "hoeffding", "gumbel", "nonprivate")


def _run_method(method, x, U, kernel, threshold, cfg: ExperimentConfig, rho, rng) -> bool:
    delta = cfg.dp_delta if cfg.dp_delta is not None else 1.0 / cfg.n
    if method == "hoeffding":
        return hoeffding_test(U, cfg.n, kernel.order, kernel.bound, threshold, cfg.alpha,
                              rho, rng).reject
    branch = "gumbel" if method == "gumbel" else "auto"
    if method == "nonprivate":
        rho = math.inf
    rel = private_releases(x, kernel, cfg.alpha, rho, delta, cfg.B, rng, branch=branch,
                           gamma=cfg.gamma, gap_fraction=cfg.gap_fraction, U=U)
    return rel.outcome(threshold).reject


def run_power_experiment(cfg: ExperimentConfig, progress=None) -> List[dict]:
    """Rejection frequencies of each method per (rho, Δ).

    Every (rho, Δ, rep) cell gets a fresh data set seeded from
    (seed, rho index, Δ index, rep); all methods in a cell share that data
    set, so method comparisons use common random numbers.
    """
    kernel = kendall_kernel(cfg.d)
    rows = []
    for a, rho in enumerate(cfg.rho_list):
        for b, threshold in enumerate(cfg.delta_grid):
            hits = {m: 0 for m in cfg.methods}
            for rep in range(cfg.reps):
                data_rng = np.random.default_rng([cfg.seed, a, b, rep, 0])
                x = sample_copula(cfg.model, cfg.n, data_rng, cfg.psd_tol)
                U = compute_ustat(x, kernel).U
                for c, method in enumerate(cfg.methods):
                    test_rng = np.random.default_rng([cfg.seed, a, b, rep, 1 + c])
                    hits[method] += _run_method(method, x, U, kernel, threshold, cfg, rho,
                                                test_rng)
            for method in cfg.methods:
                rows.append({
                    "model": cfg.model.name, "n": cfg.n, "d": cfg.d, "rho": rho,
                    "Delta": threshold, "method": method,
                    "rejectRate": hits[method] / cfg.reps, "reps": cfg.reps, "seed": cfg.seed,
                })
                if progress is not None:
                    progress(rows[-1])
    return rows


def write_csv(rows: Iterable[dict], fh) -> None:
    writer = csv.DictWriter(fh, fieldnames=CSV_FIELDS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow(row)
