import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from liso.pava import fitted_values, merge_ties, pava_fit
from liso.shrink import (
    increasing_zero_threshold,
    thresholds_for,
    univariate_liso,
    winsorize,
    zero_threshold,
)
from oracles import monotone_tv_bruteforce

S3 = merge_ties([0.0, 1.0, 2.0], [-1.0, 0.0, 1.0])


def test_thresholds_at_zero_penalty():
    s = merge_ties(np.arange(4), [1, 3, 2, 4])
    r = pava_fit(s)
    t = thresholds_for(r, s, 0.0)
    assert (t.a, t.b, t.at_mean) == (1.0, 4.0, False)


def test_thresholds_hand_example():
    t = thresholds_for(pava_fit(S3), S3, 0.5)
    assert t.a == pytest.approx(-0.5) and t.b == pytest.approx(0.5) and not t.at_mean
    np.testing.assert_allclose(winsorize(pava_fit(S3), S3, t), [-0.5, 0, 0.5])


def test_thresholds_at_mean_when_penalty_reaches_bound():
    t = thresholds_for(pava_fit(S3), S3, 1.0)
    assert t.at_mean and t.a == t.b == 0.0
    assert zero_threshold(S3) == 1.0


def test_negative_penalty_rejected():
    with pytest.raises(ValueError):
        thresholds_for(pava_fit(S3), S3, -0.1)
    with pytest.raises(ValueError):
        univariate_liso(S3, -1.0)
    with pytest.raises(ValueError):
        univariate_liso(S3, 1.0, penalty_weight=0.0)


def test_univariate_examples():
    np.testing.assert_allclose(univariate_liso(S3, 0.5).values, [-0.5, 0.0, 0.5])
    np.testing.assert_allclose(univariate_liso(S3, 0.0).values, fitted_values(pava_fit(S3), S3))
    f = univariate_liso(S3, 5.0)
    assert f.total_variation() == 0.0
    np.testing.assert_allclose(f.values, 0.0)
    # penalty weight scales the level
    np.testing.assert_allclose(univariate_liso(S3, 0.25, penalty_weight=2.0).values, [-0.5, 0, 0.5])


@pytest.mark.parametrize("y, z", [([-1, 0, 1], 1.0), ([2, 2, 2], 0.0), ([1, -1], 1.0)])
def test_zero_threshold_examples(y, z):
    assert zero_threshold(merge_ties(np.arange(len(y)), y)) == pytest.approx(z)


def test_increasing_threshold_is_exact():
    # decreasing data: the increasing fit is constant for any penalty
    s = merge_ties(np.arange(3), [1.0, 0.0, -1.0])
    assert increasing_zero_threshold(s) == 0.0
    assert zero_threshold(s) == 1.0
    rng = np.random.default_rng(3)
    for _ in range(50):
        s = merge_ties(np.arange(8), rng.normal(size=8), rng.uniform(0.5, 2, 8))
        t = increasing_zero_threshold(s)
        assert t <= zero_threshold(s) + 1e-15
        assert univariate_liso(s, t).total_variation() == pytest.approx(0.0, abs=1e-12)
        if t > 1e-9:
            assert univariate_liso(s, 0.99 * t).total_variation() > 0


instances = st.integers(1, 10).flatmap(
    lambda n: st.tuples(
        st.lists(st.floats(-5, 5), min_size=n, max_size=n),
        st.lists(st.integers(1, 3), min_size=n, max_size=n),
        st.floats(0, 1.5),
    )
)


@given(instances)
def test_matches_enumeration_and_preserves_mean(data):
    y, w, frac = data
    y, w = np.array(y), np.array(w, dtype=float)
    s = merge_ties(np.arange(y.size), y, w)
    lam = frac * zero_threshold(s)
    f = univariate_liso(s, lam).values
    ref, _ = monotone_tv_bruteforce(s.y, s.w, lam)
    np.testing.assert_allclose(f, ref, atol=1e-8)
    assert abs(np.dot(s.w, f) - np.dot(s.w, s.y)) <= 1e-10 * max(1.0, np.dot(s.w, np.abs(s.y)))
    if frac >= 1:
        assert univariate_liso(s, lam).total_variation() == 0.0


def test_thresholds_monotone_and_fit_continuous_in_penalty():
    rng = np.random.default_rng(11)
    for _ in range(20):
        s = merge_ties(rng.normal(size=9), rng.normal(size=9), rng.uniform(0.5, 2, 9))
        r = pava_fit(s)
        lams = np.linspace(0, 1.2 * zero_threshold(s), 400)
        a = np.array([thresholds_for(r, s, l).a for l in lams])
        b = np.array([thresholds_for(r, s, l).b for l in lams])
        tv = np.array([univariate_liso(s, l).total_variation() for l in lams])
        fits = np.array([univariate_liso(s, l).values for l in lams])
        assert np.all(np.diff(a) >= -1e-12) and np.all(np.diff(b) <= 1e-12)
        assert np.all(a <= b + 1e-12)
        assert np.all(np.diff(tv) <= 1e-12)
        jump = np.max(np.abs(np.diff(fits, axis=0)), axis=1)
        bound = np.maximum(np.abs(np.diff(a)), np.abs(np.diff(b)))
        assert np.all(jump <= bound + 1e-9)
