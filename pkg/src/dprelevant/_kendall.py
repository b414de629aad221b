"""Fast Kendall pair sums via merge-sort inversion counting.

For a pair of columns (x, y) the pair sum is

    S(x, y) = sum_{k < l} sign(x_k - x_l) * sign(y_k - y_l)

and Kendall's tau-a is S / C(n, 2). Ties contribute zero, which is the
definitional (not tie-adjusted) form the sensitivity bounds rely on.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _count_inversions(a, buf):
    # Bottom-up merge sort on `a` (modified in place); counts pairs i < j
    # with a[i] > a[j]. Equal values are not inversions.
    n = a.shape[0]
    inv = 0
    width = 1
    while width < n:
        lo = 0
        while lo < n - width:
            mid = lo + width
            hi = min(lo + 2 * width, n)
            i = lo
            j = mid
            k = lo
            while i < mid and j < hi:
                if a[j] < a[i]:
                    buf[k] = a[j]
                    inv += mid - i
                    j += 1
                else:
                    buf[k] = a[i]
                    i += 1
                k += 1
            while i < mid:
                buf[k] = a[i]
                i += 1
                k += 1
            while j < hi:
                buf[k] = a[j]
                j += 1
                k += 1
            for t in range(lo, hi):
                a[t] = buf[t]
            lo += 2 * width
        width *= 2
    return inv


@njit(cache=True)
def _pair_sum(order_i, rank_i, rank_j, ties_i, ties_j, ys, buf):
    # Walk rows in ascending x order; within runs of tied x, sort y so tied-x
    # pairs are never counted as inversions.
    n = order_i.shape[0]
    for t in range(n):
        ys[t] = rank_j[order_i[t]]
    joint = 0
    if ties_i > 0:
        start = 0
        for t in range(1, n + 1):
            if t == n or rank_i[order_i[t]] != rank_i[order_i[start]]:
                if t - start > 1:
                    ys[start:t] = np.sort(ys[start:t])
                    run = 1
                    for u in range(start + 1, t):
                        if ys[u] == ys[u - 1]:
                            run += 1
                        else:
                            joint += run * (run - 1) // 2
                            run = 1
                    joint += run * (run - 1) // 2
                start = t
    swaps = _count_inversions(ys, buf)
    total = n * (n - 1) // 2
    return total - ties_i - ties_j + joint - 2 * swaps


@njit(cache=True)
def _pair_sums(ranks, ties, orders, first, second):
    n = ranks.shape[0]
    out = np.empty(first.shape[0], dtype=np.int64)
    ys = np.empty(n, dtype=np.int64)
    buf = np.empty(n, dtype=np.int64)
    for t in range(first.shape[0]):
        i = first[t]
        j = second[t]
        out[t] = _pair_sum(orders[:, i], ranks[:, i], ranks[:, j], ties[i], ties[j], ys, buf)
    return out


def dense_ranks(x):
    """Column-wise dense integer ranks (ties share a rank) and tied-pair counts."""
    x = np.asarray(x, dtype=np.float64)
    n, d = x.shape
    ranks = np.empty((n, d), dtype=np.int64)
    ties = np.empty(d, dtype=np.int64)
    for j in range(d):
        values, inverse, counts = np.unique(x[:, j], return_inverse=True, return_counts=True)
        ranks[:, j] = inverse
        ties[j] = int(np.sum(counts * (counts - 1) // 2))
    return ranks, ties


def kendall_pair_sums(x, pairs):
    """Exact integer pair sums S(x_i, x_j) for each row (i, j) of `pairs`."""
    ranks, ties = dense_ranks(x)
    orders = np.ascontiguousarray(np.argsort(ranks, axis=0, kind="stable"))
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    return _pair_sums(ranks, ties, orders, pairs[:, 0].copy(), pairs[:, 1].copy())


def kendall_contributions(x, pairs):
    """Per-row contributions c[l, t] = sum_m sign(x_li - x_mi) sign(x_lj - x_mj).

    Row l's contribution to the pair sum of pair t; removing row l lowers the
    pair sum by exactly c[l, t]. O(n^2) per pair.
    """
    x = np.asarray(x, dtype=np.float64)
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    n = x.shape[0]
    cols = np.unique(pairs)
    signs = {c: np.sign(x[:, None, c] - x[None, :, c]).astype(np.int8) for c in cols}
    out = np.empty((n, pairs.shape[0]), dtype=np.int64)
    for t, (i, j) in enumerate(pairs):
        out[:, t] = np.einsum("lm,lm->l", signs[i], signs[j], dtype=np.int64)
    return out
