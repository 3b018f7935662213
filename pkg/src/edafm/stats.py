"""Friedman / Nemenyi rank statistics and Bonferroni-corrected paired t-tests."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import chi2, rankdata, studentized_range, ttest_rel

from .errors import LengthMismatch, TooFewMethods, TooManyMethods, ZeroVariance

MAX_METHODS = 20


@dataclass
class FriedmanResult:
    chi2: float
    p: float
    mean_ranks: np.ndarray
    pairwise_p: np.ndarray
    n_experiments: int
    dropped: list = field(default_factory=list)  # experiment columns with missing cells


def mean_ranks(scores: np.ndarray) -> np.ndarray:
    """Mean rank per method (rows); rank 1 = highest score, ties averaged."""
    ranks = np.apply_along_axis(lambda col: rankdata(-col), 0, scores)
    return ranks.mean(axis=1)


def friedman_nemenyi(scores) -> FriedmanResult:
    """``scores`` is methods x experiments, higher is better.

    Experiments with any missing (NaN) cell are dropped and listed in
    ``dropped``.  Nemenyi p-values use the studentized range with infinite
    degrees of freedom.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2:
        raise ValueError("scores must be methods x experiments")
    k = scores.shape[0]
    if k < 2:
        raise TooFewMethods(f"need at least 2 methods, got {k}")
    if k > MAX_METHODS:
        raise TooManyMethods(f"Nemenyi reference covers k <= {MAX_METHODS}, got {k}")
    keep = ~np.isnan(scores).any(axis=0)
    dropped = np.flatnonzero(~keep).tolist()
    scores = scores[:, keep]
    n = scores.shape[1]
    if n < 2:
        raise TooFewMethods(f"need at least 2 complete experiments, got {n}")
    R = mean_ranks(scores)
    stat = 12.0 * n / (k * (k + 1)) * (np.sum(R ** 2) - k * (k + 1) ** 2 / 4.0)
    p = float(chi2.sf(stat, k - 1))
    q = np.abs(R[:, None] - R[None, :]) / np.sqrt(k * (k + 1) / (6.0 * n))
    pw = studentized_range.sf(q * np.sqrt(2.0), k, np.inf)
    pw = np.clip(pw, 0.0, 1.0)
    np.fill_diagonal(pw, 1.0)
    return FriedmanResult(float(stat), p, R, pw, n, dropped)


def critical_difference(k: int, n: int, alpha: float = 0.05) -> float:
    """Nemenyi critical difference of mean ranks."""
    if not 2 <= k <= MAX_METHODS:
        raise TooManyMethods(f"k must be in [2, {MAX_METHODS}]")
    q = studentized_range.ppf(1 - alpha, k, np.inf) / np.sqrt(2.0)
    return float(q * np.sqrt(k * (k + 1) / (6.0 * n)))


def paired_ttest_bonferroni(a, b, m: int = 1) -> float:
    """Two-sided paired t-test p-value times ``m``, capped at 1."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise LengthMismatch("paired scores must be equal-length vectors")
    if len(a) < 2:
        raise ValueError("need at least 2 folds")
    if m < 1:
        raise ValueError("m must be >= 1")
    d = a - b
    if np.ptp(d) <= 1e-12 * max(1.0, float(np.abs(d).max())):  # constant up to rounding
        raise ZeroVariance("paired differences have zero variance; p undefined")
    return float(min(1.0, m * ttest_rel(a, b).pvalue))
