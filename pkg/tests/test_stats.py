import math

import numpy as np
import pytest
from scipy.stats import studentized_range

from edafm.errors import LengthMismatch, TooFewMethods, TooManyMethods, ZeroVariance
from edafm.stats import critical_difference, friedman_nemenyi, mean_ranks, paired_ttest_bonferroni


def test_identical_rankings():
    scores = np.array([[0.9] * 5, [0.8] * 5, [0.7] * 5])
    r = friedman_nemenyi(scores)
    assert r.chi2 == pytest.approx(10.0, abs=1e-12)
    assert r.p == pytest.approx(math.exp(-5), rel=1e-12)
    assert r.p == pytest.approx(6.738e-3, rel=1e-3)
    np.testing.assert_array_equal(r.mean_ranks, [1, 2, 3])


def test_identical_methods_pairwise_one(rng):
    a = rng.random(8)
    r = friedman_nemenyi(np.stack([a, a, rng.random(8)]))
    assert r.pairwise_p[0, 1] == pytest.approx(1.0)


def test_permutation_invariance(rng):
    s = rng.random((4, 9))
    a = friedman_nemenyi(s)
    b = friedman_nemenyi(s[:, rng.permutation(9)])
    assert a.chi2 == pytest.approx(b.chi2, rel=1e-12)
    np.testing.assert_allclose(a.pairwise_p, b.pairwise_p, rtol=1e-12)


def test_ties_average():
    np.testing.assert_allclose(mean_ranks(np.array([[1.0, 2.0], [1.0, 1.0]])), [1.25, 1.75])


def test_nemenyi_critical_value():
    # tabulated q_0.05 for k=3 is 2.343
    q = studentized_range.ppf(0.95, 3, np.inf) / np.sqrt(2)
    assert q == pytest.approx(2.3437, abs=1e-3)
    assert critical_difference(3, 10) == pytest.approx(q * math.sqrt(3 * 4 / 60), rel=1e-12)
    # a rank gap equal to the CD has pairwise p = alpha
    k, n = 4, 12
    cd = critical_difference(k, n)
    qstat = cd / math.sqrt(k * (k + 1) / (6 * n))
    assert studentized_range.sf(qstat * math.sqrt(2), k, np.inf) == pytest.approx(0.05, rel=1e-6)


def test_missing_cells_dropped():
    s = np.array([[0.9, np.nan, 0.9, 0.9], [0.5, 0.5, 0.5, 0.5]])
    r = friedman_nemenyi(s)
    assert r.dropped == [1] and r.n_experiments == 3


def test_errors():
    with pytest.raises(TooFewMethods):
        friedman_nemenyi(np.ones((1, 5)))
    with pytest.raises(TooManyMethods):
        friedman_nemenyi(np.ones((21, 5)))


def test_ttest():
    a = np.array([0.7, 0.8, 0.75, 0.9])
    with pytest.raises(ZeroVariance):
        paired_ttest_bonferroni(a, a + 0)
    with pytest.raises(ZeroVariance):
        paired_ttest_bonferroni(a + 0.1, a)
    b = np.array([0.6, 0.75, 0.7, 0.72])
    p1 = paired_ttest_bonferroni(a, b, 1)
    assert paired_ttest_bonferroni(a, b, 5) == pytest.approx(min(1.0, 5 * p1), rel=1e-12)
    assert paired_ttest_bonferroni(a, b, 1000) == 1.0
    with pytest.raises(LengthMismatch):
        paired_ttest_bonferroni(a, b[:3])
