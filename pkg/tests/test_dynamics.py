import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tvdmpc import (DiscreteDistribution, LinearSystemModel, batch_matrices, disturbance_offset,
                    enumerate_scenarios, propagate_disturbed, propagate_nominal)
from tvdmpc.dynamics import prediction_matrices, scenario_offsets
from tvdmpc.errors import CapacityError, DimensionError

from conftest import BENCH_A, BENCH_B, random_system


def test_shape_errors():
    with pytest.raises(DimensionError):
        LinearSystemModel(np.eye(2), np.ones((3, 1)), np.ones((2, 1)))
    sys = LinearSystemModel(BENCH_A, BENCH_B, BENCH_B)
    with pytest.raises(DimensionError):
        propagate_nominal(sys, [1.0, 2.0, 3.0], [0.0])


def test_bench_is_open_loop_unstable():
    ev = np.linalg.eigvals(np.array(BENCH_A))
    assert np.all(np.abs(ev) > 1.0)


def test_scenarios_enumeration_order_and_mass():
    d = DiscreteDistribution([-1.0, 0.0, 1.0], [0.1, 0.8, 0.1])
    sc = enumerate_scenarios(d, 2)
    assert len(sc) == 9
    assert sc.index[:4].tolist() == [[0, 0], [0, 1], [0, 2], [1, 0]]
    assert sc.joint_probs.sum() == pytest.approx(1.0)
    assert sc.joint_probs[4] == pytest.approx(0.64)
    assert sc.stacked().shape == (9, 2)
    with pytest.raises(CapacityError):
        enumerate_scenarios(d, 12, cap=1000)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 3), st.integers(1, 5), st.integers(0, 10**6))
def test_batch_matches_recursion(n_x, k, seed):
    rng = np.random.default_rng(seed)
    sys = random_system(rng, n_x)
    x0 = rng.normal(size=n_x)
    u = rng.normal(size=(k, 1))
    w = rng.normal(size=(k, 1))
    bm = batch_matrices(sys, k)
    xs = propagate_disturbed(sys, x0, u, w)
    direct = np.linalg.matrix_power(sys.A, k) @ x0 + bm.Bk @ u.ravel() + bm.Dk @ w.ravel()
    assert np.allclose(direct, xs[k], atol=1e-10)
    assert np.allclose(disturbance_offset(sys, w), bm.Dk @ w.ravel())
    Phi, Gamma, Delta = prediction_matrices(sys, k)
    assert np.allclose(Phi @ x0 + Gamma @ u.ravel() + Delta @ w.ravel(), xs[1:].ravel(), atol=1e-10)


def test_nominal_is_zero_disturbance():
    rng = np.random.default_rng(0)
    sys = random_system(rng, 2)
    u = rng.normal(size=(3, 1))
    assert np.array_equal(propagate_nominal(sys, [1.0, 1.0], u),
                          propagate_disturbed(sys, [1.0, 1.0], u, np.zeros((3, 1))))


def test_scenario_offsets_match_propagation():
    sys = LinearSystemModel(BENCH_A, BENCH_B, BENCH_B)
    d = DiscreteDistribution([-1.0, 0.0, 1.0], [0.1, 0.8, 0.1])
    sc = enumerate_scenarios(d, 3)
    offs = scenario_offsets(sys, sc)
    x0 = np.array([1.0, -2.0])
    u = np.zeros((3, 1))
    nominal = propagate_nominal(sys, x0, u)[3]
    for j in (0, 5, 26):
        assert np.allclose(propagate_disturbed(sys, x0, u, sc.sequences[j])[3], nominal + offs[j])
