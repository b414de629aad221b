"""Bounded vector-valued U-statistics, leave-one-out replicates and jackknife.

A U-statistic of order r with kernel h: (R^d)^r -> R^p is the average of h
over all C(n, r) row subsets. The built-in Kendall kernel evaluates
sign(x_1i - x_2i) * sign(x_1j - x_2j) for every retained column pair (i, j),
so the statistic is the vector of pairwise Kendall tau-a coefficients.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.special import gammaln

from dprelevant import _kendall


class DataError(ValueError):
    """Raised for malformed or inconsistent input data."""


def as_data_matrix(values) -> np.ndarray:
    x = np.asarray(values, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise DataError(f"data must be a 2-d matrix, got shape {x.shape}")
    if x.shape[0] < 2:
        raise DataError("data needs at least two rows")
    if not np.all(np.isfinite(x)):
        raise DataError("data contains non-finite entries")
    return x


def load_csv(path) -> np.ndarray:
    """Read a comma-separated numeric matrix with an optional single header row."""
    with open(path, newline="") as fh:
        rows = [row for row in csv.reader(fh) if row]
    if not rows:
        raise DataError(f"{path}: empty file")
    try:
        [float(v) for v in rows[0]]
    except ValueError:
        rows = rows[1:]
    try:
        values = [[float(v) for v in row] for row in rows]
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None
    widths = {len(row) for row in values}
    if len(widths) != 1:
        raise DataError(f"{path}: ragged rows (widths {sorted(widths)})")
    return as_data_matrix(values)


def vech_pairs(d: int, band: Optional[int] = None) -> np.ndarray:
    """Column pairs (i, j), i < j, in vech order (upper triangle stacked by column).

    With `band=m` only pairs with j - i >= m are kept.
    """
    pairs = [(i, j) for j in range(d) for i in range(j) if band is None or j - i >= band]
    return np.asarray(pairs, dtype=np.int64).reshape(-1, 2)


@dataclass(frozen=True)
class KernelSpec:
    """A bounded symmetric kernel of order `order` with `output_dim` components.

    `evaluate` maps an (order, d) block of rows to a length-`output_dim`
    vector, each component bounded by `bound` in absolute value. `pairs`
    optionally maps output coordinates to column pairs.
    """

    name: str
    order: int
    bound: float
    dim: int
    output_dim: int
    evaluate: Callable[[np.ndarray], np.ndarray]
    pairs: Optional[np.ndarray] = None
    band: Optional[int] = None

    def __post_init__(self):
        if self.order < 1:
            raise ValueError("kernel order must be >= 1")
        if not self.bound > 0:
            raise ValueError("kernel bound must be positive")
        if self.pairs is not None and len(self.pairs) != self.output_dim:
            raise ValueError("pairs must match output_dim")


def kendall_kernel(d: int, band: Optional[int] = None) -> KernelSpec:
    pairs = vech_pairs(d, band)
    if len(pairs) == 0:
        raise ValueError(f"no column pairs retained for d={d}, band={band}")
    first, second = pairs[:, 0], pairs[:, 1]

    def evaluate(rows):
        diff = np.sign(rows[0] - rows[1])
        return diff[first] * diff[second]

    return KernelSpec("kendall", 2, 1.0, d, len(pairs), evaluate, pairs, band)


def mean_kernel(d: int, bound: float = 1.0) -> KernelSpec:
    """Order-1 identity kernel; the U-statistic is the column mean."""
    return KernelSpec("mean", 1, bound, d, d, lambda rows: rows[0].copy())


@dataclass
class UStatResult:
    U: np.ndarray
    n: int
    order: int
    bound: float
    leave_one_out: Optional[np.ndarray] = None
    loo_coords: Optional[np.ndarray] = None

    @property
    def p(self) -> int:
        return self.U.shape[0]


@dataclass
class JackknifeCov:
    zeta: np.ndarray
    indices: np.ndarray


def _check(data, kernel: KernelSpec, with_loo: bool) -> np.ndarray:
    x = as_data_matrix(data)
    if x.shape[1] != kernel.dim:
        raise DataError(f"kernel expects {kernel.dim} columns, data has {x.shape[1]}")
    need = kernel.order + 1 if with_loo else kernel.order
    if x.shape[0] < need:
        raise DataError(f"need at least {need} rows for a kernel of order {kernel.order}")
    return x


def _brute_force_sums(x, kernel: KernelSpec, with_loo: bool):
    n = x.shape[0]
    total = np.zeros(kernel.output_dim)
    touching = np.zeros((n, kernel.output_dim)) if with_loo else None
    for subset in itertools.combinations(range(n), kernel.order):
        value = np.asarray(kernel.evaluate(x[list(subset)]), dtype=np.float64)
        total += value
        if with_loo:
            touching[list(subset)] += value
    return total, touching


def compute_ustat(data, kernel: KernelSpec, with_leave_one_out: bool = False,
                  coords=None, U=None) -> UStatResult:
    """Compute the U-statistic and, optionally, its leave-one-out replicates.

    Args:
      data: n x d observation matrix.
      kernel: the kernel specification.
      with_leave_one_out: also compute U^(l), the statistic on the data with
        row l removed, for every l.
      coords: restrict the leave-one-out replicates to these output
        coordinates (default: all). The full vector U is always returned.
      U: the already computed statistic, if available; for the Kendall
        kernel only the pair sums on `coords` are then recomputed.

    Returns:
      A UStatResult; `leave_one_out[l]` holds U^(l) on `loo_coords`.
    """
    x = _check(data, kernel, with_leave_one_out)
    n = x.shape[0]
    coords_arr = (np.arange(kernel.output_dim) if coords is None
                  else np.asarray(coords, dtype=np.int64).reshape(-1))
    if kernel.name == "kendall":
        npairs = math.comb(n, 2)
        if U is None:
            sums = _kendall.kendall_pair_sums(x, kernel.pairs)
            U = sums / npairs
            sub = sums[coords_arr]
        else:
            U = np.asarray(U, dtype=np.float64)
            sub = _kendall.kendall_pair_sums(x, kernel.pairs[coords_arr]) if with_leave_one_out else None
        loo = None
        if with_leave_one_out:
            contrib = _kendall.kendall_contributions(x, kernel.pairs[coords_arr])
            loo = (sub[None, :] - contrib) / math.comb(n - 1, 2)
        return UStatResult(U, n, 2, kernel.bound, loo, coords_arr if with_leave_one_out else None)

    total, touching = _brute_force_sums(x, kernel, with_leave_one_out)
    U = total / math.comb(n, kernel.order)
    loo = None
    if with_leave_one_out:
        loo = (total[coords_arr][None, :] - touching[:, coords_arr]) / math.comb(n - 1, kernel.order)
    return UStatResult(U, n, kernel.order, kernel.bound, loo, coords_arr if with_leave_one_out else None)


def jackknife_cov(result: UStatResult, indices=None) -> JackknifeCov:
    """Jackknife covariance (n - 1) * sum_l (U^(l) - U)(U^(l) - U)^T on `indices`.

    The estimate targets n * Cov(U); for the mean kernel it is the sample
    covariance matrix.
    """
    if result.leave_one_out is None:
        raise ValueError("jackknife_cov needs leave-one-out replicates")
    if indices is None:
        indices = result.loo_coords
    indices = np.asarray(indices, dtype=np.int64).reshape(-1)
    position = {int(c): k for k, c in enumerate(result.loo_coords)}
    try:
        cols = [position[int(i)] for i in indices]
    except KeyError as exc:
        raise ValueError(f"coordinate {exc.args[0]} has no leave-one-out replicates") from None
    dev = result.leave_one_out[:, cols] - result.U[indices][None, :]
    zeta = (result.n - 1) * (dev.T @ dev)
    zeta = 0.5 * (zeta + zeta.T)
    return JackknifeCov(zeta, indices)


def ustat_sensitivity(order: int, bound: float, n: int) -> float:
    """Replace-one sensitivity 2 r L / n of every coordinate of U and of ||U||_inf."""
    if n < order:
        raise ValueError("n must be at least the kernel order")
    return 2.0 * order * bound / n


def _log_binom(a, b):
    if b < 0 or b > a:
        return -math.inf
    return gammaln(a + 1) - gammaln(b + 1) - gammaln(a - b + 1)


def jackknife_sensitivity(order: int, bound: float, n: int, k: int) -> float:
    """l2 sensitivity of the k x k jackknife covariance under one-row replacement.

    Binomial ratios are evaluated in log space so large n does not overflow.
    """
    r = order
    if n <= r:
        raise ValueError("jackknife sensitivity needs n > r")
    if k < 1:
        raise ValueError("k must be >= 1")
    log_den = _log_binom(n - 1, r)
    total = 0.0
    for c in range(r + 1):
        log_ratio = _log_binom(n - r + c, r - c) - log_den
        if log_ratio == -math.inf:
            continue
        total += math.exp(log_ratio) * math.comb(r, c) * abs(c * n - r * r)
    prefactor = (n - 1) * r / (n * (n - r))
    return prefactor * total * math.sqrt(2.0) * k * bound ** 2


def tie_jitter(data, sd: float, rng: np.random.Generator) -> np.ndarray:
    """Add independent N(0, sd^2) noise to every entry to break ties."""
    if not sd > 0:
        raise ValueError("jitter sd must be positive")
    x = as_data_matrix(data)
    return x + sd * rng.standard_normal(x.shape)
