import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate, stats

from probemh import ConfigurationError, ForwardModel, SingularDiffusionError
from probemh import _kernels
from probemh.probing import (
    InputBox,
    KdeModel,
    kde_fit,
    load_probes,
    save_probes,
    sde_uniform_density,
    silverman_bandwidth,
    uniform_probe,
)
from probemh.sde import SdePathModel, constant_coefficient_model, gbm_model


def square_model():
    return ForwardModel(1, 1, lambda x: x**2, lambda xs: xs**2, name="square")


def identity2():
    return ForwardModel(2, 2, lambda x: x, lambda xs: xs, name="identity")


def test_identity_probe_mean():
    res = uniform_probe(identity2(), InputBox([0, 0], [1, 1]), 10_000, seed=0)
    np.testing.assert_allclose(res.outputs.mean(axis=0), [0.5, 0.5], atol=0.02)


def test_square_probe_matches_sqrt_cdf():
    res = uniform_probe(square_model(), InputBox([-1], [1]), 100_000, seed=1)
    assert stats.kstest(res.outputs[:, 0], np.sqrt).statistic < 0.01


def test_zero_count_is_rejected():
    with pytest.raises(ConfigurationError):
        uniform_probe(square_model(), InputBox([-1], [1]), 0, seed=0)


def test_box_validation():
    with pytest.raises(ConfigurationError):
        InputBox([1.0], [0.0])
    with pytest.raises(ConfigurationError):
        InputBox([0.0, 0.0], [1.0])


def test_probe_independent_of_jobs_and_shards():
    a = uniform_probe(identity2(), InputBox([0, 0], [1, 1]), 5000, seed=4, jobs=1, shard_size=5000)
    b = uniform_probe(identity2(), InputBox([0, 0], [1, 1]), 5000, seed=4, jobs=3, shard_size=700)
    np.testing.assert_array_equal(a.outputs, b.outputs)


def test_non_finite_rows_are_dropped_and_reported():
    model = ForwardModel(1, 1, lambda x: np.log(x), lambda xs: np.where(xs < 0.25, np.nan, xs))
    with pytest.warns(UserWarning, match="non-finite"):
        res = uniform_probe(model, InputBox([0], [1]), 2000, seed=0)
    assert res.n_dropped == res.dropped_inputs.shape[0] > 0
    assert res.outputs.shape[0] + res.n_dropped == 2000
    assert np.all(res.dropped_inputs < 0.25)
    assert res.summary()["dropped"] == res.n_dropped


def test_kde_two_identical_points_bandwidth_one():
    kde = kde_fit(np.zeros((2, 1)), bandwidth=1.0)
    assert kde.pdf([[0.0]])[0] == pytest.approx(0.3989422804014327, abs=1e-12)


def test_kde_integrates_to_one():
    pts = make_rng_points(500, 1)
    kde = kde_fit(pts)
    val, _ = integrate.quad(lambda y: kde.pdf([[y]])[0], -20, 20, limit=400)
    assert val >= 0.999


def make_rng_points(n, d, seed=0):
    return np.random.Generator(np.random.Philox(seed)).normal(size=(n, d))


def test_kde_far_tail_is_finite_and_tiny():
    kde = kde_fit(np.array([[0.0], [0.1]]), bandwidth=0.01)
    v = kde.log_eval([5.0])  # hundreds of bandwidths away
    assert math.isfinite(v) and v < -700


def test_kde_finite_at_probe_points():
    pts = make_rng_points(50, 2)
    kde = kde_fit(pts)
    assert np.all(np.isfinite(kde.logpdf(pts)))


def test_silverman_rule():
    pts = make_rng_points(1000, 2)
    expected = 1.06 * pts.std(axis=0, ddof=1) * 1000 ** (-0.2)
    np.testing.assert_allclose(silverman_bandwidth(pts), expected)
    np.testing.assert_allclose(kde_fit(pts).bandwidth, expected)


def test_zero_variance_dimension_is_floored_with_warning():
    pts = np.column_stack([np.linspace(0, 1, 20), np.full(20, 3.0)])
    with pytest.warns(UserWarning, match="zero probe variance"):
        kde = kde_fit(pts)
    assert kde.floored_dims == (1,)
    assert kde.bandwidth[1] == pytest.approx(3e-8)


def test_kde_needs_two_points():
    with pytest.raises(ConfigurationError):
        kde_fit(np.zeros((1, 1)))


@given(st.floats(-3, 3), st.floats(-3, 3))
def test_kde_gradient_matches_finite_difference(a, b):
    pts = make_rng_points(40, 2, seed=5)
    kde = KdeModel(pts, np.array([0.4, 0.7]))
    y = np.array([a, b])
    g = kde.grad_log_eval(y)
    h = 1e-6
    fd = np.array([(kde.log_eval(y + h * e) - kde.log_eval(y - h * e)) / (2 * h) for e in np.eye(2)])
    np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-7)


def test_kde_backends_agree():
    pts = make_rng_points(300, 2, seed=2)
    q = make_rng_points(100, 2, seed=3) * 3
    bw = np.array([0.3, 0.5])
    a = _kernels.kde_logpdf_numpy(pts, bw, q, max_cells=1000)
    b = _kernels.kde_logpdf_numba(pts, bw, q)
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)


def test_tabulated_kde_tracks_exact():
    res = uniform_probe(square_model(), InputBox([-1], [1]), 20_000, seed=0)
    kde = kde_fit(res.outputs)
    tab = kde.tabulated([0.0], [1.0], n_grid=2049)
    for q in np.linspace(0.02, 0.98, 25):
        assert tab([q]) == pytest.approx(kde.log_eval([q]), abs=1e-3)
    assert tab([1.5]) == kde.log_eval([1.5])


def test_kde_recovers_square_law():
    res = uniform_probe(square_model(), InputBox([-1], [1]), 100_000, seed=0)
    kde = kde_fit(res.outputs)
    q = np.linspace(0.1, 0.9, 81)
    assert np.mean(np.abs(kde.pdf(q[:, None]) - 1 / (2 * np.sqrt(q)))) < 0.05


def test_probe_csv_round_trip(tmp_path):
    data = make_rng_points(30, 3)
    path = save_probes(tmp_path / "p.csv", data)
    assert path.read_text().splitlines()[0] == "y1,y2,y3"
    np.testing.assert_array_equal(load_probes(path), data)


def test_probe_csv_errors_name_the_line(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("y1,y2\n1,2\n3\n")
    with pytest.raises(ConfigurationError, match=":3:"):
        load_probes(p)


# --- closed-form probing density of the Euler map -----------------------------


def test_constant_diffusion_gives_zero():
    m = constant_coefficient_model(0.0, 1.0, n_steps=4, rho=1.0)
    assert sde_uniform_density(m, [0.3, -0.2, 0.9, 0.0]) == 0.0


def test_gbm_flat_path_value():
    m = gbm_model(1.0, 0.5, 1.0, 1.0, 3, 2.0)
    assert sde_uniform_density(m, np.zeros(3)) == pytest.approx(3 * math.log(0.5), abs=1e-15)


def test_out_of_support_gives_sentinel():
    m = gbm_model(n_steps=3, rho=0.5)
    assert sde_uniform_density(m, [0.1, 0.6, 0.0]) == -math.inf


@given(st.lists(st.floats(-0.19, 0.4), min_size=5, max_size=5), st.floats(0.45, 10))
def test_rho_only_enters_through_support(inc, rho):
    base = sde_uniform_density(gbm_model(n_steps=5, rho=0.45), inc)
    other = sde_uniform_density(gbm_model(n_steps=5, rho=rho), inc)
    assert base == other and math.isfinite(base)


@given(st.lists(st.floats(-1.5, 1.5), min_size=4, max_size=4), st.floats(0.1, 2), st.floats(0, 2))
def test_support_is_monotone_in_rho(inc, rho, extra):
    small = sde_uniform_density(constant_coefficient_model(n_steps=4, rho=rho), inc)
    big = sde_uniform_density(constant_coefficient_model(n_steps=4, rho=rho + extra), inc)
    if math.isfinite(small):
        assert math.isfinite(big)


def test_singular_diffusion_names_step():
    m = gbm_model(n_steps=3, rho=2.0)
    with pytest.raises(SingularDiffusionError) as err:
        sde_uniform_density(m, [-0.5, -0.5, 0.1])
    assert err.value.step == 2
