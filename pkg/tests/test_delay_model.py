import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from oracles import gamma_cdf_quadrature

from msnmpc.delay_model import (
    DelayBuffer,
    FitDegenerateError,
    GammaParams,
    ScenarioSet,
    fit_gamma,
    gamma_cdf,
    raw_scenario_weights,
    regularized_lower_gamma,
    sample_delay,
    scenario_weights,
)
from msnmpc.dynamics import DomainError

TREE_TIMES = [0.05, 0.07, 0.1, 0.2, 0.33]
NOMINAL_DELAY = GammaParams(12.0, 0.015)

shape = st.floats(0.2, 50.0)
scale = st.floats(0.001, 1.0)


def test_buffer_is_bounded_fifo():
    buf = DelayBuffer(3)
    for v in (0.1, 0.2, 0.3, 0.4, 0.5):
        buf.push(v)
    assert len(buf) == 3
    np.testing.assert_array_equal(buf.snapshot(), [0.3, 0.4, 0.5])
    with pytest.raises(DomainError):
        buf.push(-0.1)
    with pytest.raises(DomainError):
        DelayBuffer(0)


@settings(max_examples=50, deadline=None)
@given(n_max=st.integers(1, 30), values=st.lists(st.floats(0, 1), max_size=80))
def test_buffer_holds_most_recent_entries(n_max, values):
    buf = DelayBuffer(n_max, values)
    assert len(buf) == min(len(values), n_max)
    np.testing.assert_array_equal(buf.snapshot(), np.array(values[len(values) - len(buf):], dtype=float))


def test_fit_from_nominal_moments():
    # mean 0.18 s with variance 12 * 0.015^2 inverts to the reported shape and scale
    half_gap = np.sqrt(12 * 0.015**2 / 2)
    fit = fit_gamma([0.18 - half_gap, 0.18 + half_gap])
    assert fit.alpha == pytest.approx(12.0)
    assert fit.beta == pytest.approx(0.015)


def test_fit_two_sample_hand_case():
    fit = fit_gamma(DelayBuffer(10, [0.1, 0.3]))
    assert fit.alpha == pytest.approx(2.0)
    assert fit.beta == pytest.approx(0.1)


def test_fit_degenerate_windows():
    with pytest.raises(FitDegenerateError):
        fit_gamma([0.2, 0.2, 0.2])
    with pytest.raises(FitDegenerateError):
        fit_gamma([0.2])
    with pytest.raises(FitDegenerateError):
        fit_gamma(np.array([0.2, 0.2 + 1e-6]))


@pytest.mark.parametrize("alpha,beta", [(12.0, 0.015), (2.0, 0.1), (5.0, 0.04)])
def test_fit_recovers_generating_parameters(alpha, beta):
    draws = np.random.default_rng(1).gamma(alpha, beta, 10_000)
    fit = fit_gamma(draws)
    assert fit.alpha == pytest.approx(alpha, rel=0.1)
    assert fit.beta == pytest.approx(beta, rel=0.1)


def test_cdf_known_values():
    assert gamma_cdf(0.0, NOMINAL_DELAY) == 0.0
    g = gamma_cdf_quadrature([0.05, 0.18], 12.0, 0.015)
    assert gamma_cdf(0.05, NOMINAL_DELAY) == pytest.approx(g[0], abs=1e-12)
    assert gamma_cdf(0.05, NOMINAL_DELAY) == pytest.approx(1.87e-4, rel=1e-2)
    assert 0.5 < gamma_cdf(0.18, NOMINAL_DELAY) == pytest.approx(0.54, abs=0.01)
    assert regularized_lower_gamma(3.0, float("inf")) == 1.0


def test_cdf_matches_library_incomplete_gamma():
    special = pytest.importorskip("scipy.special")
    for a in (0.3, 1.0, 2.5, 12.0, 40.0):
        for x in np.linspace(0, 5 * a + 5, 37):
            assert regularized_lower_gamma(a, x) == pytest.approx(special.gammainc(a, x), abs=1e-13)


def test_cdf_domain_errors():
    with pytest.raises(DomainError):
        gamma_cdf(-0.1, NOMINAL_DELAY)
    with pytest.raises(DomainError):
        GammaParams(0.0, 1.0)
    with pytest.raises(DomainError):
        regularized_lower_gamma(-1.0, 1.0)


@settings(max_examples=200, deadline=None)
@given(a=shape, b=scale, t1=st.floats(0, 10), t2=st.floats(0, 10))
def test_cdf_is_monotone_probability(a, b, t1, t2):
    p = GammaParams(a, b)
    lo, hi = sorted((t1, t2))
    g_lo, g_hi = gamma_cdf(lo, p), gamma_cdf(hi, p)
    assert 0.0 <= g_lo <= g_hi <= 1.0


def test_weights_for_five_branch_tree():
    raw = raw_scenario_weights(NOMINAL_DELAY, TREE_TIMES)
    assert np.all(raw >= 0)
    assert raw.sum() == pytest.approx(gamma_cdf(0.33, NOMINAL_DELAY), abs=1e-15)
    ref = np.diff(gamma_cdf_quadrature(TREE_TIMES, 12.0, 0.015), prepend=0.0)
    np.testing.assert_allclose(raw, ref, atol=1e-12)
    w = scenario_weights(NOMINAL_DELAY, TREE_TIMES)
    assert abs(w.sum() - 1.0) < 1e-12


def test_single_branch_and_tail_policies():
    np.testing.assert_array_equal(scenario_weights(NOMINAL_DELAY, [0.05]), [1.0])
    raw = raw_scenario_weights(NOMINAL_DELAY, TREE_TIMES)
    last = scenario_weights(NOMINAL_DELAY, TREE_TIMES, "last_branch")
    np.testing.assert_allclose(last[:-1], raw[:-1], atol=1e-15)
    assert last[-1] == pytest.approx(1.0 - raw[:-1].sum())
    # all mass far beyond the tree: the raw weights underflow and the coarsest branch takes it all
    far = GammaParams(2000.0, 1.0)
    assert raw_scenario_weights(far, TREE_TIMES).sum() == 0.0
    for policy in ("renormalize", "last_branch"):
        np.testing.assert_array_equal(scenario_weights(far, TREE_TIMES, policy), [0, 0, 0, 0, 1])
    with pytest.raises(DomainError):
        scenario_weights(NOMINAL_DELAY, TREE_TIMES, "drop")
    with pytest.raises(DomainError):
        raw_scenario_weights(NOMINAL_DELAY, [0.1, 0.05])


@settings(max_examples=150, deadline=None)
@given(
    a=shape,
    b=scale,
    times=st.lists(st.floats(0.001, 3.0), min_size=1, max_size=8, unique=True),
    policy=st.sampled_from(["renormalize", "last_branch"]),
)
def test_weights_normalized_and_telescoping(a, b, times, policy):
    times = sorted(times)
    assume(all(t2 - t1 > 1e-9 for t1, t2 in zip(times, times[1:])))
    p = GammaParams(a, b)
    w = scenario_weights(p, times, policy)
    assert np.all(w >= 0)
    assert abs(w.sum() - 1.0) <= 1e-12
    raw = raw_scenario_weights(p, times)
    if len(times) > 1:
        np.testing.assert_array_equal(raw_scenario_weights(p, times[:-1]), raw[:-1])


def test_scenario_set_validation():
    s = ScenarioSet.uniform(TREE_TIMES)
    assert s.size == 5 and sum(s.weights) == pytest.approx(1.0)
    with pytest.raises(DomainError):
        ScenarioSet((0.05, 0.05), (0.5, 0.5))
    with pytest.raises(DomainError):
        ScenarioSet((0.05, 0.1), (0.7, 0.7))
    with pytest.raises(DomainError):
        ScenarioSet((0.05,), (0.5, 0.5))


def test_sampled_delay_moments_and_determinism():
    rng = np.random.default_rng(7)
    d = np.array([sample_delay(rng, NOMINAL_DELAY) for _ in range(100_000)])
    assert d.mean() == pytest.approx(0.18, rel=0.01)
    assert d.var() == pytest.approx(12 * 0.015**2, rel=0.03)
    r1, r2 = np.random.default_rng(3), np.random.default_rng(3)
    assert [sample_delay(r1, NOMINAL_DELAY) for _ in range(5)] == [sample_delay(r2, NOMINAL_DELAY) for _ in range(5)]
