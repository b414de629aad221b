"""Gap queries and private estimation of the extremal set of a U-statistic.

Coordinates are ordered by |U| descending (ties by ascending index) and the
gap query q_j is the drop between the j-th and (j+1)-th largest values. A
single large gap separates a few strong coordinates from the bulk; its
position is picked with report-noisy-max and the top set is released by
propose-test-release, costing privacy only twice regardless of its size.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np

from dprelevant.privacy import PrivacyBudget, ptr_lower_bound, rl_gap


@dataclass
class GapVector:
    q: np.ndarray
    order: np.ndarray


@dataclass
class ExtremalEstimate:
    """Either ⊥ (`indices is None`) or a set of 0-based coordinate indices."""

    indices: Optional[Tuple[int, ...]]
    k_hat: Optional[int] = None
    truncated: bool = False
    q_hat: Optional[float] = None

    @property
    def is_bottom(self) -> bool:
        return self.indices is None

    def to_dict(self) -> dict:
        return {
            "outcome": "bottom" if self.is_bottom else "set",
            "indices": None if self.is_bottom else [int(i) for i in self.indices],
            "kHat": self.k_hat,
            "truncated": self.truncated,
        }


BOTTOM = ExtremalEstimate(None)


def descending_order(U) -> np.ndarray:
    a = np.abs(np.asarray(U, dtype=np.float64))
    return np.argsort(-a, kind="stable")


def gaps(U) -> GapVector:
    U = np.asarray(U, dtype=np.float64).reshape(-1)
    if U.size < 2:
        raise ValueError("gap queries need p >= 2")
    order = descending_order(U)
    a = np.abs(U)[order]
    return GapVector(a[:-1] - a[1:], order)


def clipped_gaps(U, threshold: float) -> GapVector:
    """Gaps of max(|U|_(j), Δ); every gap below the threshold collapses to 0."""
    U = np.asarray(U, dtype=np.float64).reshape(-1)
    if U.size < 2:
        raise ValueError("gap queries need p >= 2")
    order = descending_order(U)
    a = np.maximum(np.abs(U)[order], threshold)
    return GapVector(a[:-1] - a[1:], order)


def cardinality_cap(p: int) -> int:
    """Largest extremal set passed on to covariance estimation: ceil(ln p)."""
    return max(1, math.ceil(math.log(p)))


def nonprivate_extremal(U, n: int) -> np.ndarray:
    """{i : |U_i| >= ||U||_inf - sqrt(log p log n / n)} (0-based, ascending)."""
    a = np.abs(np.asarray(U, dtype=np.float64).reshape(-1))
    margin = math.sqrt(math.log(a.size) * math.log(n) / n)
    return np.flatnonzero(a >= a.max() - margin)


def gap_threshold(order: int, bound: float, n: int) -> float:
    """t = 4 r L / n: the replace-one sensitivity of a gap query."""
    return 4.0 * order * bound / n


def _select(gv: GapVector, order: int, bound: float, n: int, rho: float, delta: float,
            rng: np.random.Generator, budget: Optional[PrivacyBudget],
            regularizer: Optional[Callable]) -> ExtremalEstimate:
    if not rho > 0:
        raise ValueError("rho must be positive")
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    p = gv.order.size
    t = gap_threshold(order, bound, n)
    gap_rng, ptr_rng, pick_rng = rng.spawn(3)
    j = rl_gap(gv.q, 2.0 * math.sqrt(rho), t, gap_rng, regularizer, budget)
    k_hat = j + 1
    passed, q_hat = ptr_lower_bound(gv.q[j], t, rho, delta, ptr_rng, budget)
    if not passed:
        return ExtremalEstimate(None, None, False, q_hat)
    top = gv.order[:k_hat]
    cap = cardinality_cap(p)
    if k_hat <= cap:
        return ExtremalEstimate(tuple(sorted(int(i) for i in top)), k_hat, False, q_hat)
    picked = pick_rng.choice(top, size=cap, replace=False)
    return ExtremalEstimate(tuple(int(i) for i in np.sort(picked)), k_hat, True, q_hat)


def p_rel(U, order: int, bound: float, n: int, rho: float, delta: float,
          rng: np.random.Generator, budget: Optional[PrivacyBudget] = None,
          regularizer: Optional[Callable] = None) -> ExtremalEstimate:
    """Adaptive private extremal-set estimate (delta-approximate rho-zCDP).

    Args:
      U: the U-statistic vector (length p >= 2).
      order, bound: kernel order r and bound L; gap sensitivity is 4 r L / n.
      n: sample size.
      rho, delta: budget for this step; rho / 2 goes to the noisy argmax over
        the gaps, rho / 2 and delta to the propose-test-release check.
      rng: random source; split into independent streams for the argmax,
        the PTR noise and the random subselection.
      budget: optional ledger to debit.
      regularizer: optional index weights nu(j) for the argmax.

    Returns:
      ⊥ when the selected gap fails the PTR check; otherwise the top-k̂
      coordinates (ascending indices), or ceil(ln p) of them drawn uniformly when k̂ is larger.
    """
    return _select(gaps(U), order, bound, n, rho, delta, rng, budget, regularizer)


def relevant_set(U, threshold: float, order: int, bound: float, n: int, rho: float,
                 delta: float, rng: np.random.Generator,
                 budget: Optional[PrivacyBudget] = None,
                 regularizer: Optional[Callable] = None) -> ExtremalEstimate:
    """Private estimate of {i : |theta_i| > Δ} from Δ-clipped gap queries."""
    if not threshold > 0:
        raise ValueError("threshold must be positive")
    gv = clipped_gaps(U, threshold)
    return _select(gv, order, bound, n, rho, delta, rng, budget, regularizer)
