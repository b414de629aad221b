"""zCDP mechanisms, budget accounting and the sparse vector baseline.

Budgets are in approximate zCDP: a pair (rho, delta) that composes by
addition in both coordinates. Every mechanism that touches sensitive data
takes an optional PrivacyBudget and debits it before drawing any noise, so
an overdraft raises before anything is released.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, List, Optional

import numpy as np
from scipy.special import gammaln
from scipy.stats import norm

_SLACK = 1e-9


class BudgetExceededError(RuntimeError):
    pass


@dataclass(frozen=True)
class LedgerEntry:
    mechanism: str
    rho: float
    delta: float


@dataclass
class PrivacyBudget:
    """Declared (rho, delta) budget with an append-only spending ledger."""

    rho: float
    delta: float = 0.0
    ledger: List[LedgerEntry] = field(default_factory=list)

    def __post_init__(self):
        if self.rho < 0:
            raise ValueError("rho must be nonnegative")
        if not 0 <= self.delta < 1:
            raise ValueError("delta must lie in [0, 1)")

    @property
    def spent_rho(self) -> float:
        return math.fsum(e.rho for e in self.ledger)

    @property
    def spent_delta(self) -> float:
        return math.fsum(e.delta for e in self.ledger)

    @property
    def remaining_rho(self) -> float:
        return max(self.rho - self.spent_rho, 0.0)

    def spend(self, mechanism: str, rho: float, delta: float = 0.0) -> None:
        if rho < 0 or delta < 0:
            raise ValueError("cannot spend a negative amount")
        new_rho = self.spent_rho + rho
        new_delta = self.spent_delta + delta
        if new_rho > self.rho * (1 + _SLACK) + 1e-15:
            raise BudgetExceededError(
                f"{mechanism}: rho {new_rho:.6g} would exceed budget {self.rho:.6g}")
        if new_delta > self.delta * (1 + _SLACK) + 1e-15:
            raise BudgetExceededError(
                f"{mechanism}: delta {new_delta:.6g} would exceed budget {self.delta:.6g}")
        self.ledger.append(LedgerEntry(mechanism, float(rho), float(delta)))

    def to_dict(self) -> dict:
        return {
            "rho": self.rho,
            "delta": self.delta,
            "spent": {"rho": self.spent_rho, "delta": self.spent_delta},
            "entries": [{"mechanism": e.mechanism, "rho": e.rho, "delta": e.delta}
                        for e in self.ledger],
        }

    def dump(self, fh) -> None:
        json.dump(self.to_dict(), fh, indent=2)


def charge(budget: Optional[PrivacyBudget], name: str, rho: float, delta: float = 0.0):
    """Debit `budget` (if any); infinite rho marks a non-private run and is not recorded."""
    if budget is not None and rho != math.inf:
        budget.spend(name, rho, delta)


@dataclass
class NoisyRelease:
    value: object
    sigma: float
    mechanism: str


def gaussian_sigma(sensitivity: float, rho: float) -> float:
    if not rho > 0:
        raise ValueError("rho must be positive")
    if not sensitivity > 0:
        raise ValueError("sensitivity must be positive")
    return 0.0 if rho == math.inf else sensitivity / math.sqrt(2.0 * rho)


def gaussian_mechanism(value, l2_sensitivity: float, rho: float, rng: np.random.Generator,
                       budget: Optional[PrivacyBudget] = None,
                       name: str = "gaussian") -> NoisyRelease:
    """Release `value` plus N(0, sigma^2) noise per coordinate, sigma = Δ2 / sqrt(2 rho).

    `rho=math.inf` is the noiseless limit. Pass `budget=None` when the input
    is synthetic (e.g. a bootstrap draw); nothing is debited then.
    """
    sigma = gaussian_sigma(l2_sensitivity, rho)
    charge(budget, name, rho)
    arr = np.asarray(value, dtype=np.float64)
    noise = sigma * rng.standard_normal(arr.shape)
    out = arr + noise
    return NoisyRelease(float(out) if out.ndim == 0 else out, sigma, name)


def gumbel_noise(scale: float, size, rng: np.random.Generator) -> np.ndarray:
    """Gumbel(0, scale) draws by inverting the CDF exp(-exp(-x/scale))."""
    u = rng.random(size)
    # rng.random is in [0, 1); map 0 away from the log singularity
    u = np.where(u == 0.0, np.nextafter(0.0, 1.0), u)
    return -scale * np.log(-np.log(u))


def gumbel_quantile(alpha: float, scale: float = 1.0) -> float:
    """The (1 - alpha)-quantile of Gumbel(0, scale)."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    if not scale > 0:
        raise ValueError("scale must be positive")
    return -scale * math.log(-math.log1p(-alpha))


def rl_gap(q, epsilon: float, l1_sensitivity: float, rng: np.random.Generator,
           regularizer: Optional[Callable[[np.ndarray], np.ndarray]] = None,
           budget: Optional[PrivacyBudget] = None) -> int:
    """Regularized report-noisy-max: argmax_j q_j + nu(j) + Gumbel(2 Δ1 / eps).

    Indices are 0-based. `regularizer` receives the array of 1-based
    positions and returns the additive weights. Costs eps^2 / 8 zCDP.
    """
    q = np.asarray(q, dtype=np.float64).reshape(-1)
    if q.size == 0:
        raise ValueError("rl_gap needs at least one query")
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    score = q.copy()
    if regularizer is not None:
        score = score + np.asarray(regularizer(np.arange(1, q.size + 1)), dtype=np.float64)
    charge(budget, "rl_gap", epsilon ** 2 / 8.0)
    if epsilon != math.inf:
        score = score + gumbel_noise(2.0 * l1_sensitivity / epsilon, q.size, rng)
    return int(np.argmax(score))


def linear_regularizer(c: float, n: int) -> Callable[[np.ndarray], np.ndarray]:
    """nu(j) = c (1 - j / n), favouring gaps among the larger coordinates."""
    return lambda j: c * (1.0 - j / n)


def ptr_lower_bound(q_value: float, t: float, rho: float, delta: float,
                    rng: np.random.Generator,
                    budget: Optional[PrivacyBudget] = None) -> tuple[bool, float]:
    """Noisy high-probability lower bound for a gap query and its PTR test.

    q_hat = q + N(0, sigma^2) - sigma z_{1-delta} with sigma = t / sqrt(rho);
    passes when q_hat > t. Debits rho / 2 and delta.
    """
    if not rho > 0:
        raise ValueError("rho must be positive")
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    charge(budget, "ptr", rho / 2.0, delta)
    if rho == math.inf:
        q_hat = float(q_value)
    else:
        sigma = t / math.sqrt(rho)
        q_hat = float(q_value + sigma * rng.standard_normal() - sigma * norm.ppf(1.0 - delta))
    return q_hat > t, q_hat


def zcdp_to_eps_delta(rho: float, delta: float) -> float:
    """epsilon such that rho-zCDP implies (epsilon, delta)-DP."""
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    if rho < 0:
        raise ValueError("rho must be nonnegative")
    return rho + 2.0 * math.sqrt(rho * math.log(1.0 / delta))


def svt_run(queries: Iterable[float], threshold: float, sigma1: float, sigma2: float,
            cutoff: int, max_len: int, rng: np.random.Generator) -> List[bool]:
    """Generalized sparse vector technique with Gaussian noise.

    The threshold is perturbed once with sd `sigma1`, each query with sd
    `sigma2`. Returns True (above) / False (below) answers; stops after
    `cutoff` positives or `max_len` queries.
    """
    if cutoff < 1:
        raise ValueError("cutoff must be >= 1")
    noisy_t = threshold + sigma1 * rng.standard_normal()
    answers = []
    hits = 0
    for i, q in enumerate(queries):
        if i >= max_len:
            break
        above = q + sigma2 * rng.standard_normal() >= noisy_t
        answers.append(bool(above))
        if above:
            hits += 1
            if hits >= cutoff:
                break
    return answers


def _log_binom(p: float, c: float) -> float:
    return float(gammaln(p + 1) - gammaln(c + 1) - gammaln(p - c + 1))


def svt_cutoff(p: int, convention: str = "ceil") -> float:
    """Cut-off c = log p, either raw (`"log"`) or rounded up (`"ceil"`)."""
    c = math.log(p)
    if convention == "ceil":
        return float(math.ceil(c))
    if convention == "log":
        return c
    raise ValueError(f"unknown cut-off convention {convention!r}")


def svt_epsilon_bound(sensitivity: float, sigma1: float, sigma2: float, c: float, p: int,
                      delta: float) -> float:
    """Upper bound on epsilon(delta) for the Gaussian SVT with c positives out of p.

    Non-integer c is allowed; the binomial coefficient is then the
    log-gamma continuation.
    """
    for name, v in (("sensitivity", sensitivity), ("sigma1", sigma1), ("sigma2", sigma2),
                    ("c", c), ("p", p)):
        if not v > 0:
            raise ValueError(f"{name} must be positive")
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    a = sensitivity ** 2 / (2 * sigma1 ** 2) + 2 * c * sensitivity ** 2 / sigma2 ** 2
    log_terms = math.log(1 / delta) + math.log(c) + _log_binom(p, c)
    return a + math.sqrt(2 * a * log_terms)
