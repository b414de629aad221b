"""Private tests of H0(Δ): max_i |theta_i| <= Δ against H1(Δ): max_i |theta_i| > Δ.

The main entry point is `p_hd_u_test`: estimate the extremal set privately,
then either bootstrap the max-norm over that (small) set with a privatized,
sign-adjusted jackknife covariance, or fall back to an extreme-value (Gumbel)
critical value when no gap separates the largest coordinates.

All privatized quantities are computed once by `private_releases`; the
decision for any Δ is post-processing of those releases, which is what makes
`scan_delta` free of additional privacy cost.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from dprelevant.extremal import ExtremalEstimate, p_rel
from dprelevant.privacy import PrivacyBudget, charge, gaussian_mechanism, gaussian_sigma, \
    gumbel_quantile
from dprelevant.ustat import KernelSpec, UStatResult, compute_ustat, jackknife_cov, \
    jackknife_sensitivity, ustat_sensitivity

BRANCHES = ("bootstrap", "gumbel", "hoeffding", "finiteDim")


def sign_matrix(U_selected) -> np.ndarray:
    """(sign(U_i U_j))_{ij} with sign(0) taken as +1."""
    s = np.where(np.asarray(U_selected, dtype=np.float64) >= 0, 1.0, -1.0)
    return np.outer(s, s)


def gausscov(zeta, rho: float, sensitivity: float, rng: np.random.Generator,
             budget: Optional[PrivacyBudget] = None) -> np.ndarray:
    """Add one symmetric Gaussian matrix (upper triangle drawn, mirrored)."""
    zeta = np.asarray(zeta, dtype=np.float64)
    if zeta.ndim != 2 or zeta.shape[0] != zeta.shape[1] or not np.allclose(zeta, zeta.T):
        raise ValueError("gausscov expects a symmetric square matrix")
    sigma = gaussian_sigma(sensitivity, rho)
    charge(budget, "gausscov", rho)
    k = zeta.shape[0]
    z = rng.standard_normal((k, k))
    upper = np.triu(z)
    noise = upper + np.triu(z, 1).T
    return zeta + sigma * noise


def psd_project(zeta) -> np.ndarray:
    """Nearest positive semidefinite matrix in Frobenius norm (eigenvalue clipping)."""
    zeta = np.asarray(zeta, dtype=np.float64)
    sym = 0.5 * (zeta + zeta.T)
    w, v = np.linalg.eigh(sym)
    if w.min() >= 0:
        return sym
    out = (v * np.clip(w, 0.0, None)) @ v.T
    return 0.5 * (out + out.T)


def quantile_index(alpha: float, B: int) -> int:
    """1-based order statistic floor((1 - alpha) B) used as the bootstrap quantile (B >= 1/alpha)."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    if B * alpha < 1.0 - 1e-12:
        raise ValueError(f"B={B} too small for alpha={alpha}: need B >= 1/alpha")
    return math.floor((1.0 - alpha) * B + 1e-9)


def _max_norm_quantile(cov, B: int, noise_sd: float, alpha: float,
                       rng: np.random.Generator) -> float:
    k = quantile_index(alpha, B)
    w, v = np.linalg.eigh(cov)
    factor = v * np.sqrt(np.clip(w, 0.0, None))
    draws = rng.standard_normal((B, cov.shape[0])) @ factor.T
    stats = np.abs(draws).max(axis=1)
    if noise_sd > 0:
        stats = stats + noise_sd * rng.standard_normal(B)
    return float(np.sort(stats)[k - 1])


def hqu_quantile(zeta_hat, signs, n: int, B: int, norm_sensitivity: float,
                 cov_sensitivity: float, rho: float, alpha: float, rng: np.random.Generator,
                 rho_norm: Optional[float] = None, budget: Optional[PrivacyBudget] = None,
                 return_cov: bool = False):
    """Bootstrap (1 - alpha)-quantile of the privatized max-norm over the extremal set.

    The sign-adjusted covariance S ⊙ zeta_hat is privatized once with budget
    `rho`, projected onto the PSD cone and used (divided by n) to draw B
    Gaussian vectors. Each draw's max-norm gets the same Gaussian noise as
    the real release (sd norm_sensitivity / sqrt(2 rho_norm)); that noise is
    not debited since the draws carry no sensitive data.

    Returns the quantile on the U scale, plus the privatized covariance when
    `return_cov` is set.
    """
    if B < 1:
        raise ValueError("B must be >= 1")
    quantile_index(alpha, B)
    zeta_s = np.asarray(signs, dtype=np.float64) * np.asarray(zeta_hat, dtype=np.float64)
    cov_rng, boot_rng = rng.spawn(2)
    cov_dp = gausscov(zeta_s, rho, cov_sensitivity, cov_rng, budget)
    noise_sd = gaussian_sigma(norm_sensitivity, rho if rho_norm is None else rho_norm)
    q = _max_norm_quantile(psd_project(cov_dp) / n, B, noise_sd, alpha, boot_rng)
    return (q, cov_dp) if return_cov else q


def qu_quantile(zeta_dp, n: int, B: int, norm_sensitivity: float, rho: float, alpha: float,
                rng: np.random.Generator) -> float:
    """sqrt(n)-scaled bootstrap quantile of ||N(0, zeta_dp / n)||_inf plus release noise."""
    if B < 1:
        raise ValueError("B must be >= 1")
    noise_sd = gaussian_sigma(norm_sensitivity, rho)
    q = _max_norm_quantile(psd_project(zeta_dp) / n, B, noise_sd, alpha, rng)
    return math.sqrt(n) * q


def gumbel_scale(bound: float, threshold: float, gamma: float = 0.0,
                 variance_form: str = "squared") -> float:
    """sqrt(L^2 - (Δ - γ)^2); `variance_form="linear"` uses sqrt(L - (Δ - γ)^2)."""
    lead = bound ** 2 if variance_form == "squared" else bound
    if variance_form not in ("squared", "linear"):
        raise ValueError(f"unknown variance form {variance_form!r}")
    v = lead - (threshold - gamma) ** 2
    if not v > 0:
        raise ValueError("Gumbel scale undefined: need L^2 > (Δ - γ)^2")
    return math.sqrt(v)


def gumbel_critical(n: int, p: int, threshold: float, bound: float, alpha: float,
                    gamma: float = 0.0, variance_form: str = "squared") -> float:
    """Q / sqrt(n): the U-scale excess over Δ needed for the Gumbel test to reject.

    For Δ >= L the null holds trivially (|theta_i| <= L), so the critical
    value is +inf and the test never rejects.
    """
    if p <= 1:
        raise ValueError("the Gumbel test needs p >= 2")
    if threshold >= bound:
        return math.inf
    a_p = math.sqrt(2.0 * math.log(p))
    qg = gumbel_quantile(alpha, gumbel_scale(bound, threshold, gamma, variance_form))
    Q = qg / a_p + a_p - (math.log(math.log(p)) + math.log(4 * math.pi)) / (2 * a_p)
    return Q / math.sqrt(n)


def hoeffding_critical(n: int, p: int, order: int, bound: float, alpha: float) -> float:
    return math.sqrt(2.0 * math.log(2.0 * p / alpha) * bound * order / n)


def decide(branch: str, norm: float, critical: float, threshold: float, n: int) -> bool:
    """Test decision from released quantities; pure post-processing."""
    if branch in ("bootstrap", "gumbel"):
        return bool(norm >= critical + threshold)
    if branch == "hoeffding":
        return bool(norm - threshold > critical)
    if branch == "finiteDim":
        return bool(math.sqrt(n) * (norm - threshold) > critical)
    raise ValueError(f"unknown branch {branch!r}")


@dataclass
class TestOutcome:
    reject: bool
    threshold: float
    branch: str
    norm_dp: float
    quantile: float
    n: int
    alpha: float
    extremal: Optional[ExtremalEstimate] = None
    cov_dp: Optional[np.ndarray] = None
    budget_spent: tuple = (0.0, 0.0)

    __test__ = False


@dataclass
class PrivateReleases:
    """Everything a test run publishes; decisions for any Δ derive from it."""

    branch: str
    norm_dp: float
    n: int
    p: int
    order: int
    bound: float
    alpha: float
    quantile: Optional[float] = None
    extremal: Optional[ExtremalEstimate] = None
    cov_dp: Optional[np.ndarray] = None
    budget: PrivacyBudget = field(default_factory=lambda: PrivacyBudget(math.inf))
    gamma: float = 0.0
    variance_form: str = "squared"

    def critical(self, threshold: float) -> float:
        if self.branch == "gumbel":
            return gumbel_critical(self.n, self.p, threshold, self.bound, self.alpha,
                                   self.gamma, self.variance_form)
        return self.quantile

    def outcome(self, threshold: float) -> TestOutcome:
        crit = self.critical(threshold)
        return TestOutcome(
            reject=decide(self.branch, self.norm_dp, crit, threshold, self.n),
            threshold=threshold, branch=self.branch, norm_dp=self.norm_dp, quantile=crit,
            n=self.n, alpha=self.alpha, extremal=self.extremal, cov_dp=self.cov_dp,
            budget_spent=(self.budget.spent_rho, self.budget.spent_delta))


def _release_norm(U, order, bound, n, rho, rng, budget, name="norm") -> float:
    norm = float(np.max(np.abs(U)))
    return gaussian_mechanism(norm, ustat_sensitivity(order, bound, n), rho, rng, budget,
                              name).value


def p_gumbel_test(U, n: int, order: int, bound: float, threshold: float, alpha: float,
                  rho: float, rng: np.random.Generator, gamma: float = 0.0,
                  budget: Optional[PrivacyBudget] = None,
                  variance_form: str = "squared") -> TestOutcome:
    """Extreme-value test: reject iff ||U||_inf^DP >= Q / sqrt(n) + Δ.

    Q is built from the Gumbel(0, sqrt(L^2 - (Δ - γ)^2)) quantile and the
    normal-maximum centring constants for p coordinates. Costs `rho`.
    """
    U = np.asarray(U, dtype=np.float64).reshape(-1)
    if U.size <= 1:
        raise ValueError("the Gumbel test needs p >= 2")
    budget = PrivacyBudget(rho) if budget is None else budget
    gumbel_critical(n, U.size, threshold, bound, alpha, gamma, variance_form)
    norm_dp = _release_norm(U, order, bound, n, rho, rng, budget, "norm[gumbel]")
    rel = PrivateReleases("gumbel", norm_dp, n, U.size, order, bound, alpha, budget=budget,
                          gamma=gamma, variance_form=variance_form)
    return rel.outcome(threshold)


def hoeffding_test(U, n: int, order: int, bound: float, threshold: float, alpha: float,
                   rho: Optional[float] = None, rng: Optional[np.random.Generator] = None,
                   budget: Optional[PrivacyBudget] = None) -> TestOutcome:
    """Concentration test: reject iff max|U_i| - Δ > sqrt(2 log(2p/α) L r / n).

    With `rho=None` the exact max-norm is used; otherwise it is released by
    the Gaussian mechanism at cost `rho` and the same threshold applies.
    """
    U = np.asarray(U, dtype=np.float64).reshape(-1)
    if rho is None:
        norm = float(np.max(np.abs(U)))
        budget = PrivacyBudget(math.inf) if budget is None else budget
    else:
        budget = PrivacyBudget(rho) if budget is None else budget
        norm = _release_norm(U, order, bound, n, rho, rng, budget, "norm[hoeffding]")
    crit = hoeffding_critical(n, U.size, order, bound, alpha)
    rel = PrivateReleases("hoeffding", norm, n, U.size, order, bound, alpha, quantile=crit,
                          budget=budget)
    return rel.outcome(threshold)


def _ustat(data, kernel, U):
    if U is None:
        return compute_ustat(data, kernel).U
    return U.U if isinstance(U, UStatResult) else np.asarray(U, dtype=np.float64)


def finite_dim_releases(data, kernel: KernelSpec, alpha: float, rho: float, B: int,
                        rng: np.random.Generator, budget: Optional[PrivacyBudget] = None
                        ) -> PrivateReleases:
    res = compute_ustat(data, kernel, with_leave_one_out=True)
    n, p = res.n, res.p
    budget = PrivacyBudget(rho) if budget is None else budget
    quantile_index(alpha, B)
    cov_rng, norm_rng, boot_rng = rng.spawn(3)
    zeta = jackknife_cov(res).zeta
    sens_cov = jackknife_sensitivity(kernel.order, kernel.bound, n, p)
    cov_dp = gausscov(zeta, rho / 2, sens_cov, cov_rng, budget)
    norm_dp = _release_norm(res.U, kernel.order, kernel.bound, n, rho / 2, norm_rng, budget)
    q = qu_quantile(cov_dp, n, B, ustat_sensitivity(kernel.order, kernel.bound, n), rho / 2,
                    alpha, boot_rng)
    return PrivateReleases("finiteDim", norm_dp, n, p, kernel.order, kernel.bound, alpha,
                           quantile=q, cov_dp=cov_dp, budget=budget)


def finite_dim_test(data, kernel: KernelSpec, threshold: float, alpha: float, rho: float,
                    B: int, rng: np.random.Generator,
                    budget: Optional[PrivacyBudget] = None) -> TestOutcome:
    """Bootstrap test over all p coordinates: reject iff sqrt(n)(||U||^DP - Δ) > q*.

    rho / 2 privatizes the full jackknife covariance, rho / 2 the max-norm.
    Meant for small fixed p.
    """
    return finite_dim_releases(data, kernel, alpha, rho, B, rng, budget).outcome(threshold)


def private_releases(data, kernel: KernelSpec, alpha: float, rho: float, delta: float, B: int,
                     rng: np.random.Generator, budget: Optional[PrivacyBudget] = None,
                     branch: str = "auto", gap_fraction: float = 1.0 / 3.0,
                     gamma: float = 0.0, regularizer: Optional[Callable] = None,
                     variance_form: str = "squared", U=None) -> PrivateReleases:
    """Compute and privatize everything the high-dimensional test publishes.

    `branch="auto"` runs the extremal-set pipeline: a `gap_fraction` share
    of rho (default 1/3) and all of delta go to the extremal-set estimate.
    If a set comes back, the rest is split evenly between the sign-adjusted
    covariance and the max-norm; otherwise all of it goes to the max-norm
    for the Gumbel test. `"gumbel"`, `"hoeffding"` and `"finite"` force a
    single branch that spends the whole rho.
    """
    if not 0 < gap_fraction < 1:
        raise ValueError("gap_fraction must lie in (0, 1)")
    budget = PrivacyBudget(rho, delta) if budget is None else budget
    x = np.asarray(data, dtype=np.float64)
    n = x.shape[0]
    r, L = kernel.order, kernel.bound

    if branch == "finite":
        return finite_dim_releases(x, kernel, alpha, rho, B, rng, budget)
    U = _ustat(x, kernel, U)
    p = U.size
    if branch == "hoeffding":
        norm = _release_norm(U, r, L, n, rho, rng, budget, "norm[hoeffding]")
        return PrivateReleases("hoeffding", norm, n, p, r, L, alpha,
                               quantile=hoeffding_critical(n, p, r, L, alpha), budget=budget)
    if branch == "gumbel":
        norm = _release_norm(U, r, L, n, rho, rng, budget, "norm[gumbel]")
        return PrivateReleases("gumbel", norm, n, p, r, L, alpha, budget=budget, gamma=gamma,
                               variance_form=variance_form)
    if branch != "auto":
        raise ValueError(f"unknown branch {branch!r}")
    if p < 2:
        raise ValueError("the high-dimensional test needs p >= 2")
    quantile_index(alpha, B)

    rel_rng, cov_rng, norm_rng = rng.spawn(3)
    rho_gap = gap_fraction * rho
    rho_rest = rho - rho_gap if rho != math.inf else math.inf
    extremal = p_rel(U, r, L, n, rho_gap, delta, rel_rng, budget, regularizer)
    if extremal.is_bottom:
        norm = _release_norm(U, r, L, n, rho_rest, norm_rng, budget, "norm[gumbel]")
        return PrivateReleases("gumbel", norm, n, p, r, L, alpha, extremal=extremal,
                               budget=budget, gamma=gamma, variance_form=variance_form)

    idx = np.asarray(extremal.indices, dtype=np.int64)
    res = compute_ustat(x, kernel, with_leave_one_out=True, coords=idx, U=U)
    zeta = jackknife_cov(res, idx).zeta
    signs = sign_matrix(U[idx])
    q, cov_dp = hqu_quantile(zeta, signs, n, B, ustat_sensitivity(r, L, n),
                             jackknife_sensitivity(r, L, n, idx.size), rho_rest / 2, alpha,
                             cov_rng, rho_norm=rho_rest / 2, budget=budget, return_cov=True)
    norm = _release_norm(U, r, L, n, rho_rest / 2, norm_rng, budget, "norm[bootstrap]")
    return PrivateReleases("bootstrap", norm, n, p, r, L, alpha, quantile=q, extremal=extremal,
                           cov_dp=cov_dp, budget=budget)


def p_hd_u_test(data, kernel: KernelSpec, threshold: float, alpha: float, rho: float,
                delta: float, B: int, rng: np.random.Generator, gamma: float = 0.0,
                budget: Optional[PrivacyBudget] = None, **kwargs) -> TestOutcome:
    """Private high-dimensional test of H0(Δ) at level alpha.

    Spends exactly rho (zCDP) and delta; see `private_releases` for the
    budget split and the keyword options.
    """
    rel = private_releases(data, kernel, alpha, rho, delta, B, rng, budget, gamma=gamma,
                           **kwargs)
    return rel.outcome(threshold)


@dataclass
class ScanResult:
    delta_hat: float
    grid: List[float]
    decisions: List[bool]
    criticals: List[float]
    releases: PrivateReleases

    @property
    def all_rejected(self) -> bool:
        return all(self.decisions)

    @property
    def none_rejected(self) -> bool:
        return not any(self.decisions)


def scan_delta(data, kernel: KernelSpec, grid, alpha: float, rho: float, delta: float, B: int,
               rng: np.random.Generator, gamma: float = 0.0,
               budget: Optional[PrivacyBudget] = None, **kwargs) -> ScanResult:
    """Smallest grid Δ at which H0(Δ) is not rejected (0 if every Δ is rejected).

    The releases are computed once; each grid decision is post-processing.
    """
    grid = [float(g) for g in grid]
    if not grid:
        raise ValueError("empty Δ grid")
    if any(a < b for a, b in zip(grid, grid[1:])):
        raise ValueError("Δ grid must be descending")
    rel = private_releases(data, kernel, alpha, rho, delta, B, rng, budget, gamma=gamma,
                           **kwargs)
    return scan_releases(rel, grid)


def scan_releases(rel: PrivateReleases, grid) -> ScanResult:
    grid = [float(g) for g in grid]
    crits = [rel.critical(g) for g in grid]
    decisions = [decide(rel.branch, rel.norm_dp, c, g, rel.n) for g, c in zip(grid, crits)]
    accepted = [g for g, rej in zip(grid, decisions) if not rej]
    delta_hat = min(accepted) if accepted else 0.0
    return ScanResult(delta_hat, grid, decisions, crits, rel)
