import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from probemh import ConfigurationError, DomainError, make_rng
from probemh.analysis import (
    Histogram,
    effective_sample_size,
    empirical_autocorr,
    empirical_pdf,
    ks_critical_value,
    ks_statistic,
    l1_density_distance,
)


def test_uniform_histogram_is_flat():
    h = empirical_pdf(make_rng(0).random(1_000_000), 10, (0, 1))
    assert np.all(np.abs(h.normalized_density - 1) < 0.02)


def test_single_sample_fills_one_bin():
    h = empirical_pdf([0.33], 4, (0, 1))
    assert h.counts.tolist() == [0, 1, 0, 0]
    assert h.normalized_density[1] == pytest.approx(4.0)


def test_all_outside_is_an_error_with_count():
    with pytest.raises(ConfigurationError, match="all 3 samples"):
        empirical_pdf([5.0, 6.0, 7.0], 4, (0, 1))


def test_empty_samples_error():
    with pytest.raises(ConfigurationError):
        empirical_pdf([], 4, (0, 1))


def test_outside_samples_are_reported():
    h = empirical_pdf([0.5, 2.0, -1.0], 2, (0, 1))
    assert h.n_outside == 2 and h.total == 1


@given(st.lists(st.floats(-10, 10), min_size=1, max_size=200), st.integers(1, 50))
def test_histogram_mass_is_one(xs, bins):
    h = empirical_pdf(xs, bins, (-10, 10))
    assert float(np.sum(h.normalized_density * h.widths)) == pytest.approx(1.0, abs=1e-12)


def test_autocorr_same_index_is_one():
    paths = make_rng(1).normal(size=(50, 4))
    assert empirical_autocorr(paths, 2, 2) == pytest.approx(1.0)


def test_autocorr_opposite_deviations_is_minus_one():
    paths = np.array([[0.0, 1.0, -1.0], [0.0, -1.0, 1.0]])
    assert empirical_autocorr(paths, 1, 2) == pytest.approx(-1.0)


def test_autocorr_independent_coordinates_near_zero():
    m = 20_000
    paths = make_rng(2).normal(size=(m, 3))
    assert abs(empirical_autocorr(paths, 0, 2)) < 3 / math.sqrt(m)


@given(st.integers(0, 2**32))
def test_autocorr_symmetric_and_bounded(seed):
    paths = make_rng(seed).normal(size=(30, 5)).cumsum(axis=1)
    a = empirical_autocorr(paths, 1, 4)
    assert a == empirical_autocorr(paths, 4, 1)
    assert -1 <= a <= 1


def test_autocorr_zero_variance():
    paths = np.ones((10, 3))
    with pytest.raises(DomainError):
        empirical_autocorr(paths, 0, 1)


def _exact_histogram(dist, lo, hi, bins, total=10**9):
    edges = np.linspace(lo, hi, bins + 1)
    counts = np.round(np.diff(dist.cdf(edges)) * total).astype(np.int64)
    return Histogram(edges, counts)


def test_l1_self_comparison():
    dist = stats.norm(0, 1)
    h = _exact_histogram(dist, -8, 8, 400)
    assert l1_density_distance(h, dist.pdf) < 0.01


def test_l1_against_zero_is_one():
    h = empirical_pdf(make_rng(3).random(100), 7, (0, 1))
    assert l1_density_distance(h, lambda x: np.zeros_like(x)) == pytest.approx(1.0)


def test_l1_disjoint_supports_is_two():
    # both laws inside the histogram range, on different halves of it
    h = empirical_pdf(make_rng(3).random(1000), 20, (0, 2))
    assert l1_density_distance(h, lambda x: np.where(x > 1, 1.0, 0.0)) == pytest.approx(2.0)


def test_ess_iid():
    n = 20_000
    ess = effective_sample_size(make_rng(4).normal(size=n))
    assert abs(ess / n - 1) < 0.2


def test_ess_alternating_is_capped_and_flagged():
    trace = np.tile([1.0, -1.0], 500)
    ess, capped = effective_sample_size(trace, return_flag=True)
    assert capped and ess == len(trace)


def test_ess_ar1():
    n, phi = 200_000, 0.9
    rng = make_rng(5)
    e = rng.normal(size=n)
    x = np.empty(n)
    x[0] = e[0]
    for i in range(1, n):
        x[i] = phi * x[i - 1] + e[i]
    expected = n * (1 - phi) / (1 + phi)
    assert abs(effective_sample_size(x) / expected - 1) < 0.3


def test_ess_errors():
    with pytest.raises(ConfigurationError):
        effective_sample_size(np.arange(5.0))
    with pytest.raises(DomainError):
        effective_sample_size(np.ones(50))


@given(st.integers(0, 2**32))
def test_ess_in_range(seed):
    x = make_rng(seed).normal(size=200).cumsum()
    ess = effective_sample_size(x)
    assert 0 < ess <= 200


def test_ks_statistic_matches_scipy():
    x = make_rng(6).normal(size=500)
    assert ks_statistic(x, stats.norm.cdf) == stats.kstest(x, "norm").statistic


def test_ks_critical_value_asymptotics():
    n = 1_000_000
    assert ks_critical_value(n, 0.01) * math.sqrt(n) == pytest.approx(1.6276, abs=2e-3)
    vals = ks_critical_value(np.array([100.0, 1000.0]))
    assert vals.shape == (2,) and vals[0] > vals[1]
