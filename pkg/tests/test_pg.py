import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from pgmarkov.errors import ParameterError
from pgmarkov.pg import TRUNC, draw_pg, fill_pg1, pg_mean, pg_variance
from pgmarkov.pg import _prob_right

from _oracles import pg_cdf, pg_cdf_interp, pg_moments_series


@pytest.mark.parametrize("c", [0.0, 1e-9, 1e-5, 0.5, 2.0, 10.0, 50.0, 700.0, 1e4])
def test_moments_match_series_representation(c):
    m, v = pg_moments_series(c)
    assert pg_mean(1, c) == pytest.approx(m, rel=1e-9, abs=1e-15)
    assert pg_variance(1, c) == pytest.approx(v, rel=1e-6, abs=1e-15)


def test_moment_limits_at_zero():
    assert pg_mean(1, 0.0) == 0.25
    assert pg_variance(1, 0.0) == pytest.approx(1 / 24)
    assert pg_mean(3, 0.0) == 0.75
    # the variance is continuous across the switch to the small-c series
    assert pg_variance(1, 0.999e-3) == pytest.approx(pg_variance(1, 1.001e-3), rel=1e-8)


@pytest.mark.parametrize("c", [0.0, 0.5, 2.0, 10.0])
def test_mean_within_three_standard_errors(c):
    rng = np.random.default_rng(100 + int(c * 10))
    d = draw_pg(1, c, rng, size=100_000)
    se = np.sqrt(pg_variance(1, c) / d.size)
    assert abs(d.mean() - pg_mean(1, c)) < 3 * se


@pytest.mark.parametrize("c", [0.0, 0.3, 1.7, 4.0, 12.0])
def test_ks_against_series_cdf(c):
    rng = np.random.default_rng(7)
    d = draw_pg(1, c, rng, size=20_000)
    cdf = pg_cdf_interp(c, d.max() * 1.01)
    assert stats.kstest(d, cdf).pvalue > 0.01


def test_series_cdf_is_a_distribution_function():
    t = np.linspace(0.0, 8.0, 400)
    for c in (0.0, 1.0, 6.0):
        F = pg_cdf(t, c)
        assert F[0] == 0.0
        assert np.all(np.diff(F) >= -1e-12)
        assert F[-1] == pytest.approx(1.0, abs=1e-10)


def test_both_proposal_regions_are_used():
    # small c favours draws right of the truncation point, large c the left
    rng = np.random.default_rng(3)
    x = 4 * draw_pg(1, 0.1, rng, size=20_000)
    assert 0.05 < np.mean(x > TRUNC) < 0.95
    x = 4 * draw_pg(1, 20.0, rng, size=20_000)
    assert np.mean(x < TRUNC) > 0.99


def test_mixture_weight_in_unit_interval_and_continuous_at_switch():
    z = np.array([0.0, 0.1, 1.0, 5.0, 11.999999, 12.0, 12.000001, 50.0, 5000.0])
    p = np.array([_prob_right(v) for v in z])
    assert np.all((p >= 0) & (p < 1))
    assert np.all(p[:7] > 0)
    assert np.all(np.diff(p) <= 0)
    assert p[4] == pytest.approx(p[6], rel=1e-4)


def test_sign_of_tilt_is_irrelevant():
    a = draw_pg(1, 3.3, np.random.default_rng(5), size=1000)
    b = draw_pg(1, -3.3, np.random.default_rng(5), size=1000)
    np.testing.assert_array_equal(a, b)


def test_integer_shape_adds_moments():
    rng = np.random.default_rng(11)
    for b in (2, 5):
        d = draw_pg(b, 1.5, rng, size=40_000)
        se = np.sqrt(pg_variance(b, 1.5) / d.size)
        assert abs(d.mean() - pg_mean(b, 1.5)) < 3.5 * se
        assert d.var() == pytest.approx(pg_variance(b, 1.5), rel=0.05)


def test_shape_two_matches_sum_of_two_unit_draws():
    rng = np.random.default_rng(2)
    two = draw_pg(2, 1.0, rng, size=20_000)
    ones = draw_pg(1, 1.0, rng, size=(20_000, 2)).sum(axis=1)
    assert stats.ks_2samp(two, ones).pvalue > 0.01


@settings(deadline=None, max_examples=60)
@given(st.floats(-1e4, 1e4, allow_nan=False), st.integers(0, 2**32 - 1))
def test_draws_positive_and_finite(c, seed):
    d = draw_pg(1, c, np.random.default_rng(seed), size=20)
    assert np.all(d > 0) and np.all(np.isfinite(d))


@given(st.floats(0, 500, allow_nan=False), st.floats(0, 500, allow_nan=False))
def test_mean_decreasing_in_abs_tilt(a, b):
    lo, hi = sorted((a, b))
    assert pg_mean(1, hi) <= pg_mean(1, lo) + 1e-15
    assert 0 < pg_mean(1, hi) <= 0.25


def test_same_seed_same_draws():
    a = draw_pg(1, np.linspace(-5, 5, 50), np.random.default_rng(9))
    b = np.empty(50)
    fill_pg1(np.linspace(-5, 5, 50), np.random.default_rng(9), b)
    np.testing.assert_array_equal(a, b)


def test_scalar_and_shape_handling():
    rng = np.random.default_rng(0)
    assert isinstance(draw_pg(1, 1.0, rng), float)
    assert draw_pg(1, 1.0, rng, size=(3, 4)).shape == (3, 4)
    assert draw_pg(1, np.ones((2, 5)), rng).shape == (2, 5)


@pytest.mark.parametrize("b", [0, -1, 1.5, True])
def test_invalid_shape_rejected(b):
    with pytest.raises(ParameterError):
        draw_pg(b, 1.0, np.random.default_rng(0))


@pytest.mark.parametrize("c", [np.nan, np.inf, -np.inf])
def test_non_finite_tilt_rejected(c):
    with pytest.raises(ParameterError):
        draw_pg(1, c, np.random.default_rng(0))
