"""Rank correlation and paired significance statistics."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import stats as sps

from ..errors import AllZeroDifferences, DegenerateRanking, LengthMismatch, TooFewPairs

EXACT_SIGNED_RANK_MAX_N = 25


def kendall_tau_b(observed, reference) -> float:
    """Kendall's tau-b with tie correction.

    ``(C - D) / sqrt((P - T_x) (P - T_y))`` where P is the number of pairs and
    T_x, T_y count pairs tied in each ranking.
    """
    x = np.asarray(observed)
    y = np.asarray(reference)
    if x.shape != y.shape or x.ndim != 1:
        raise LengthMismatch(f"rankings must be 1-D of equal length, got {x.shape} and {y.shape}")
    n = x.shape[0]
    if n < 2:
        raise LengthMismatch(f"need at least 2 items, got {n}")
    iu = np.triu_indices(n, k=1)
    sx = np.sign(x[:, None] - x[None, :])[iu].astype(np.int64)
    sy = np.sign(y[:, None] - y[None, :])[iu].astype(np.int64)
    pairs = n * (n - 1) // 2
    s = int((sx * sy).sum())  # concordant minus discordant
    untied_x = pairs - int((sx == 0).sum())
    untied_y = pairs - int((sy == 0).sum())
    if untied_x == 0 or untied_y == 0:
        raise DegenerateRanking("every item is tied in at least one ranking")
    return s / math.sqrt(untied_x * untied_y)


def midranks(values: np.ndarray) -> np.ndarray:
    return sps.rankdata(values, method="average")


def signed_rank_null_counts(ranks2: np.ndarray) -> np.ndarray:
    """Number of sign assignments giving each value of 2*T+.

    ``ranks2`` holds doubled (hence integer) ranks; entry k of the result is
    the count of subsets whose doubled rank sum is k.
    """
    total = int(ranks2.sum())
    counts = np.zeros(total + 1, dtype=object)
    counts[0] = 1
    for r in ranks2.astype(int):
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: total + 1 - r]
        counts = counts + shifted
    return counts


def exact_signed_rank_p(ranks: np.ndarray, t_plus: float) -> float:
    """Two-sided exact p-value, ``2 * min(P(T <= t), P(T >= t))`` capped at 1."""
    ranks2 = np.rint(2 * ranks).astype(int)
    counts = signed_rank_null_counts(ranks2)
    t2 = int(round(2 * t_plus))
    total = 2 ** len(ranks)
    lower = sum(counts[: t2 + 1])
    upper = sum(counts[t2:])
    return float(min(1, 2 * min(lower, upper) / total)) if total else 1.0


def normal_signed_rank_p(ranks: np.ndarray, t_plus: float) -> float:
    n = len(ranks)
    mean = n * (n + 1) / 4.0
    _, tie_sizes = np.unique(ranks, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - float(((tie_sizes**3) - tie_sizes).sum()) / 48.0
    z = (t_plus - mean) / math.sqrt(var)
    return float(2 * sps.norm.sf(abs(z)))


@dataclass(frozen=True)
class SignificanceReport:
    n: int  # pairs supplied
    n_nonzero: int  # pairs entering the signed-rank test
    shapiro_statistic: float
    normality_p: float
    signed_rank_statistic: float  # T+, sum of ranks of positive differences
    signed_rank_p: float
    method: str  # "exact" or "normal"


def significance_tests(scores_a, scores_b) -> SignificanceReport:
    """Shapiro-Wilk on the paired differences plus a two-sided Wilcoxon signed-rank test.

    Zero differences are dropped before ranking. The signed-rank p-value is
    exact (enumerated null distribution, midranks for ties) when at most 25
    non-zero differences remain, else the tie-corrected normal approximation.
    """
    a = np.asarray(scores_a, dtype=np.float64)
    b = np.asarray(scores_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise LengthMismatch(f"paired scores must be 1-D of equal length, got {a.shape} and {b.shape}")
    if a.shape[0] < 5:
        raise TooFewPairs(f"need at least 5 pairs, got {a.shape[0]}")
    d = a - b
    nz = d[d != 0]
    if nz.size == 0:
        raise AllZeroDifferences("all paired differences are zero")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        sw = sps.shapiro(d)
    ranks = midranks(np.abs(nz))
    t_plus = float(ranks[nz > 0].sum())
    if nz.size <= EXACT_SIGNED_RANK_MAX_N:
        p, method = exact_signed_rank_p(ranks, t_plus), "exact"
    else:
        p, method = normal_signed_rank_p(ranks, t_plus), "normal"
    return SignificanceReport(
        n=int(a.shape[0]),
        n_nonzero=int(nz.size),
        shapiro_statistic=float(sw.statistic),
        normality_p=float(sw.pvalue),
        signed_rank_statistic=t_plus,
        signed_rank_p=p,
        method=method,
    )
