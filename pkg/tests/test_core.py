import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from probemh import (
    ChainConfig,
    ChainDiagnostics,
    ChainState,
    ConfigurationError,
    ForwardModel,
    InvalidStateError,
    LogDensity,
    MetropolisStep,
    ModifiedMetropolisStep,
    NumericalError,
    make_rng,
    mh_step,
    modified_mh_step,
    random_walk_proposal,
    run_chain,
    single_site_proposal,
)
from probemh.core import ProposalKernel, acceptance_probability


def identity(n=1):
    return ForwardModel(n, n, lambda x: np.array(x, dtype=float), name="identity")


def fixed_proposal(x_new):
    return ProposalKernel(sample_from=lambda x, rng: np.array(x_new, dtype=float))


class RecordingRng:
    """Stands in for a Generator; hands out preset uniforms and counts draws."""

    def __init__(self, values):
        self.values = list(values)
        self.calls = 0

    def random(self):
        self.calls += 1
        return self.values.pop(0)


def table_density(values):
    """Log-density on the integers 0..k-1 given as a dict."""
    return LogDensity(1, lambda y: math.log(values[int(round(y[0]))]) if int(round(y[0])) in values else -math.inf)


def state_for(x, target, probe=None):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return ChainState(x, x.copy(), target(x), 0.0 if probe is None else probe(x))


# --- acceptance rule -------------------------------------------------------


def test_acceptance_probability_clamps():
    assert acceptance_probability(0.0) == 1.0
    assert acceptance_probability(math.log(2)) == 1.0
    assert acceptance_probability(-math.inf) == 0.0
    assert acceptance_probability(math.log(0.25)) == pytest.approx(0.25)


def test_equal_density_always_accepts():
    target = LogDensity(1, lambda y: 0.0)
    s = state_for([0.0], target)
    rng = RecordingRng([1.0])
    out = mh_step(s, fixed_proposal([1.0]), target, identity(), rng)
    assert out.x[0] == 1.0


def test_density_ratio_two_accepts():
    target = table_density({0: 1.0, 1: 2.0})
    s = state_for([0.0], target)
    out = mh_step(s, fixed_proposal([1.0]), target, identity(), RecordingRng([1.0]))
    assert out.x[0] == 1.0


def test_naive_toy_alpha_is_one_ninth():
    # X1 -> X2 in the three-state example: f(Y1) = 0.9, f(Y2) = 0.1
    target = table_density({0: 0.9, 1: 0.1})
    s = state_for([0.0], target)
    just_below = mh_step(s, fixed_proposal([1.0]), target, identity(), RecordingRng([1 / 9 - 1e-12]))
    just_above = mh_step(s, fixed_proposal([1.0]), target, identity(), RecordingRng([1 / 9 + 1e-12]))
    assert just_below.x[0] == 1.0
    assert just_above.x[0] == 0.0


def test_modified_toy_alpha_is_one_eighteenth():
    target = table_density({0: 0.9, 1: 0.1})
    probe = table_density({0: 1 / 3, 1: 2 / 3})
    s = state_for([0.0], target, probe)
    args = (fixed_proposal([1.0]), target, probe, identity())
    assert modified_mh_step(s, *args, RecordingRng([1 / 18 - 1e-12])).x[0] == 1.0
    assert modified_mh_step(s, *args, RecordingRng([1 / 18 + 1e-12])).x[0] == 0.0


def test_zero_probe_rejects_without_uniform():
    target = LogDensity(1, lambda y: 0.0)
    probe = LogDensity.uniform_box([0.0], [1.0])
    s = state_for([0.5], target, probe)
    rng = RecordingRng([])
    diag = ChainDiagnostics()
    out = modified_mh_step(s, fixed_proposal([2.0]), target, probe, identity(), rng, diag)
    assert out == s
    assert rng.calls == 0
    assert diag.rejected_out_of_support == 1 and diag.steps_taken == 1


def test_zero_probe_at_current_state_is_invalid():
    target = LogDensity(1, lambda y: 0.0)
    probe = LogDensity.uniform_box([0.0], [1.0])
    s = ChainState(np.array([2.0]), np.array([2.0]), 0.0, -math.inf)
    with pytest.raises(InvalidStateError):
        modified_mh_step(s, fixed_proposal([0.5]), target, probe, identity(), RecordingRng([0.0]))


def test_zero_target_never_accepted_even_with_zero_uniform():
    target = LogDensity.uniform_box([0.0], [1.0])
    s = state_for([0.5], target)
    out = mh_step(s, fixed_proposal([3.0]), target, identity(), RecordingRng([0.0]))
    assert out == s


def test_non_finite_proposal_is_rejected_and_counted():
    target = LogDensity(1, lambda y: 0.0)
    s = state_for([0.5], target)
    diag = ChainDiagnostics()
    rng = RecordingRng([])
    assert mh_step(s, fixed_proposal([math.nan]), target, identity(), rng, diag) == s
    assert diag.steps_taken == 1 and diag.accepted == 0 and rng.calls == 0


def test_dimension_mismatch_is_configuration_error():
    target = LogDensity(1, lambda y: 0.0)
    s = state_for([0.5], target)
    with pytest.raises(ConfigurationError):
        mh_step(s, fixed_proposal([0.1, 0.2]), target, identity(), RecordingRng([0.5]))


def test_one_model_evaluation_per_step():
    calls = []
    model = ForwardModel(1, 1, lambda x: (calls.append(1), x)[1])
    target = LogDensity(1, lambda y: -0.5 * float(y @ y))
    step = MetropolisStep(model, target, random_walk_proposal(0.5))
    state = step.init_state([0.0])
    calls.clear()
    rng = make_rng(1)
    for _ in range(50):
        state = step(state, rng)
    assert len(calls) == 50


@given(st.floats(-5, 5), st.floats(-5, 5), st.integers(0, 2**32))
def test_constant_probe_matches_plain_rule(x, x_new, seed):
    target = LogDensity(1, lambda y: -0.5 * float(y @ y))
    probe = LogDensity.constant(1)
    s = state_for([x], target, probe)
    prop = fixed_proposal([x_new])
    a = mh_step(s, prop, target, identity(), make_rng(seed))
    b = modified_mh_step(s, prop, target, probe, identity(), make_rng(seed))
    np.testing.assert_array_equal(a.x, b.x)


@given(st.integers(0, 2**32))
def test_cache_coherence_and_rejection_keeps_state(seed):
    model = ForwardModel(2, 1, lambda x: np.array([x[0] ** 2 + x[1]]))
    target = LogDensity(1, lambda y: -abs(float(y[0])))
    probe = LogDensity(1, lambda y: -0.1 * float(y[0]) ** 2)
    step = ModifiedMetropolisStep(model, target, probe, random_walk_proposal(1.0))
    state = step.init_state([0.3, -0.2])
    rng = make_rng(seed)
    for _ in range(20):
        new = step(state, rng)
        np.testing.assert_array_equal(new.y, model(new.x))
        assert new.log_target == target(new.y)
        assert new.log_probe == probe(new.y)
        if not np.array_equal(new.x, state.x):
            assert new != state
        state = new


# --- proposals --------------------------------------------------------------


def test_random_walk_support_and_symmetry():
    eps = 1e-3
    prop = random_walk_proposal(eps)
    rng = make_rng(0)
    x = np.array([1.0, -2.0, 3.0])
    draws = np.array([prop.sample_from(x, rng) for _ in range(10_000)])
    assert np.all(np.abs(draws - x) <= eps)
    assert prop.ratio(x, draws[0]) == 0.0


@pytest.mark.parametrize("bad", [0.0, -0.1, math.nan, [0.1, -0.1]])
def test_random_walk_rejects_bad_half_width(bad):
    with pytest.raises(ConfigurationError):
        random_walk_proposal(bad)


def test_single_site_changes_one_coordinate():
    prop = single_site_proposal(0.3)
    rng = make_rng(2)
    x = np.zeros(5)
    for _ in range(200):
        d = prop.sample_from(x, rng) - x
        assert np.count_nonzero(d) <= 1 and np.all(np.abs(d) <= 0.3)


# --- densities and models ----------------------------------------------------


def test_log_density_rejects_nan_and_plus_inf():
    with pytest.raises(NumericalError):
        LogDensity(1, lambda y: math.nan)([0.0])
    with pytest.raises(NumericalError):
        LogDensity(1, lambda y: math.inf)([0.0])
    assert LogDensity(1, lambda y: -math.inf)([0.0]) == -math.inf


def test_forward_model_checks_output_length():
    bad = ForwardModel(1, 2, lambda x: x)
    with pytest.raises(ConfigurationError):
        bad([1.0])


# --- run_chain ---------------------------------------------------------------


def gaussian_step(scale=1.0):
    target = LogDensity(1, lambda y: -0.5 * float(y @ y) / scale**2)
    return MetropolisStep(identity(), target, random_walk_proposal(2.0 * scale))


def test_counting_contract():
    res = run_chain(ChainConfig([0.0], total_steps=1000, burn_in=100, thinning=3, seed=1), gaussian_step())
    assert res.samples.shape == (300, 1)
    assert res.steps[0] == 101 and res.steps[-1] == 998
    assert res.diagnostics.steps_taken == 1000


def test_same_seed_same_sequence():
    cfg = ChainConfig([0.0], total_steps=2000, seed=42)
    a = run_chain(cfg, gaussian_step())
    b = run_chain(cfg, gaussian_step())
    np.testing.assert_array_equal(a.samples, b.samples)
    c = run_chain(ChainConfig([0.0], total_steps=2000, seed=43), gaussian_step())
    assert not np.array_equal(a.samples, c.samples)


def test_invalid_initial_point():
    step = MetropolisStep(identity(), LogDensity.uniform_box([0.0], [1.0]), random_walk_proposal(0.1))
    with pytest.raises(InvalidStateError):
        run_chain(ChainConfig([2.0], total_steps=10), step)


@pytest.mark.parametrize("kwargs", [
    dict(total_steps=0), dict(total_steps=10, burn_in=10), dict(total_steps=10, thinning=0),
    dict(total_steps=10, seed=-1), dict(total_steps=10, seed=2**64),
])
def test_config_validation(kwargs):
    with pytest.raises(ConfigurationError):
        ChainConfig([0.0], **kwargs)


def test_acceptance_rate_definition():
    res = run_chain(ChainConfig([0.0], total_steps=500, seed=3), gaussian_step())
    d = res.diagnostics
    assert d.acceptance_rate == d.accepted / d.steps_taken
    assert 0 < d.acceptance_rate < 1


def test_identity_map_with_uniform_probe_recovers_truncated_target():
    # h = identity on [-1, 1], probe = uniform on that box: the chain should
    # sample the target restricted to the box.
    target = LogDensity(1, lambda y: -0.5 * float(y @ y) / 0.5**2)
    probe = LogDensity.uniform_box([-1.0], [1.0])
    step = ModifiedMetropolisStep(identity(), target, probe, random_walk_proposal(0.8))
    res = run_chain(ChainConfig([0.0], total_steps=60_000, burn_in=1000, thinning=3, seed=11), step)
    x = res.samples[:, 0]
    assert np.all(np.abs(x) <= 1.0)
    from scipy import stats

    trunc = stats.truncnorm(-2, 2, scale=0.5)
    assert stats.kstest(x, trunc.cdf).statistic < 0.03
