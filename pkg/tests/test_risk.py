import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from tvdmpc import (DiscreteDistribution, brute_force_tvd_sup, cvar_tail, expectation, sample_in_tvd_ball,
                    tvd_distance, tvd_risk, var_tail, worst_case_distribution)
from tvdmpc.errors import DimensionError, DomainError, RiskWarning
from tvdmpc.risk import cvar_lp


@st.composite
def instances(draw, max_j=12):
    J = draw(st.integers(1, max_j))
    c = draw(arrays(float, J, elements=st.floats(-50, 50, allow_nan=False)))
    w = draw(arrays(float, J, elements=st.floats(0.01, 1.0)))
    return c, w / w.sum()


def test_distribution_validation():
    with pytest.raises(DomainError):
        DiscreteDistribution([0.0, 1.0], [0.5, 0.6])
    with pytest.raises(DimensionError):
        DiscreteDistribution([0.0, 1.0], [1.0])
    with pytest.raises(DomainError):
        DiscreteDistribution([0.0, 1.0], [-0.1, 1.1])
    d = DiscreteDistribution.normalized([1.0, 2.0], [1.0, 3.0])
    assert d.probs.tolist() == [0.25, 0.75]


def test_worked_values():
    c = [0.0, 1.0, 10.0]
    p = [0.1, 0.8, 0.1]
    assert expectation(c, p) == pytest.approx(1.8)
    assert cvar_tail(c, p, 0.1) == pytest.approx(10.0)
    assert cvar_tail(c, p, 0.5) == pytest.approx((10 * 0.1 + 1.0 * 0.4) / 0.5)
    assert var_tail(c, p, 0.5) == 1.0
    # alpha = 0 is the plain expectation, alpha -> 1 the maximum
    assert tvd_risk(c, p, 0.0) == pytest.approx(1.8)
    assert tvd_risk(c, p, 1.0) == 10.0
    assert tvd_risk(c, p, 0.5) == pytest.approx(0.5 * 10 + 0.5 * cvar_tail(c, p, 0.5))


def test_zero_tail_warns():
    with pytest.warns(RiskWarning):
        assert cvar_tail([1.0, 3.0], [0.5, 0.5], 0.0) == 3.0


def test_domain_errors():
    with pytest.raises(DomainError):
        tvd_risk([1.0], [1.0], 1.5)
    with pytest.raises(DomainError):
        cvar_tail([1.0], [1.0], -0.1)


@settings(max_examples=200, deadline=None)
@given(instances(), st.floats(0.0, 0.99))
def test_tvd_risk_matches_lp_oracle(inst, alpha):
    c, p = inst
    assert tvd_risk(c, p, alpha) == pytest.approx(brute_force_tvd_sup(c, p, alpha), abs=1e-8, rel=1e-10)


@settings(max_examples=200, deadline=None)
@given(instances(), st.floats(0.01, 1.0))
def test_cvar_lp_matches_sorted(inst, tail):
    c, p = inst
    assert cvar_lp(c, p, tail)[0] == pytest.approx(cvar_tail(c, p, tail), abs=1e-10, rel=1e-12)


@settings(max_examples=100, deadline=None)
@given(instances(), st.floats(0.0, 0.99))
def test_worst_case_distribution_attains_risk(inst, alpha):
    c, p = inst
    q = worst_case_distribution(c, p, alpha)
    assert tvd_distance(p, q.probs) <= alpha + 1e-12
    assert q.probs @ c == pytest.approx(tvd_risk(c, p, alpha), abs=1e-8)


@settings(max_examples=100, deadline=None)
@given(instances(), st.floats(0.0, 0.9), st.floats(0.0, 0.9), st.floats(-5, 5), st.floats(0.1, 3))
def test_coherence(inst, a1, a2, shift, scale):
    c, p = inst
    lo, hi = sorted((a1, a2))
    # monotone in the radius, translation invariant, positively homogeneous
    assert tvd_risk(c, p, lo) <= tvd_risk(c, p, hi) + 1e-9
    assert tvd_risk(c + shift, p, hi) == pytest.approx(tvd_risk(c, p, hi) + shift, abs=1e-8)
    assert tvd_risk(scale * c, p, hi) == pytest.approx(scale * tvd_risk(c, p, hi), abs=1e-8, rel=1e-9)
    assert expectation(c, p) - 1e-9 <= tvd_risk(c, p, hi) <= np.max(c) + 1e-9


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 8), st.floats(0.0, 1.0), st.integers(0, 2**32 - 1))
def test_ball_samples_stay_inside(J, alpha, seed):
    w = np.random.default_rng(seed).uniform(0.05, 1.0, J)
    d = DiscreteDistribution(np.arange(J, dtype=float), w / w.sum())
    q = sample_in_tvd_ball(d, alpha, seed)
    assert np.all(q.probs >= 0)
    assert q.probs.sum() == pytest.approx(1.0, abs=1e-12)
    assert tvd_distance(d, q) <= alpha + 1e-12


def test_ball_sampler_deterministic():
    d = DiscreteDistribution([-1.0, 0.0, 1.0], [0.1, 0.8, 0.1])
    a = sample_in_tvd_ball(d, 0.5, 7).probs
    b = sample_in_tvd_ball(d, 0.5, 7).probs
    assert a.tobytes() == b.tobytes()


def test_adversarial_sample_is_worst_case():
    d = DiscreteDistribution([-1.0, 0.0, 1.0], [0.1, 0.8, 0.1])
    q = sample_in_tvd_ball(d, 0.3, 0, adversarial_cost=[0.0, 0.0, 5.0])
    assert q.probs.tolist() == pytest.approx([0.0, 0.6, 0.4])


def test_no_warnings_on_regular_calls():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        tvd_risk([1.0, 2.0], [0.5, 0.5], 0.3)
