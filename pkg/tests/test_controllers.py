import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cyclicbp.controllers import (
    ClassicBackPressure,
    CyclicBackPressure,
    EstimatorState,
    Greedy,
    JunctionView,
    Proportional,
    allocate_classic_bp,
    allocate_cyclic_bp,
    allocate_greedy,
    allocate_proportional,
    compute_weights,
    estimator_update,
    local_view,
    make_controller,
    queue_sum_weights,
    softmax_shares,
)
from cyclicbp.dynamics import StepRecord
from cyclicbp.network import compile_network

from conftest import random_instance, tandem, two_phase_pair

weights = st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=2, max_size=6)


def pair_view(q1=10.0, q2=4.0, q3=4.0, qbar=0.5, lost=0.0):
    return JunctionView("A", ("1", "2"), [{"1": 2.0}, {"2": 3.0}], {"1": q1, "2": q2}, {"3": q3},
                        {("1", "3"): qbar}, 1.0 - lost / 30.0)


def test_weights_example():
    assert compute_weights(pair_view()).tolist() == [16.0, 12.0]
    assert compute_weights(pair_view(0, 0, 0)).tolist() == [0.0, 0.0]


def test_pressure_cancels_when_downstream_equal():
    v = JunctionView("A", ("1",), [{"1": 1.0}], {"1": 7.0}, {"3": 7.0}, {("1", "3"): 1.0})
    assert compute_weights(v).tolist() == [0.0]


def test_local_view_matches_network_weights():
    topo, tr = two_phase_pair()
    net = compile_network(topo, tr)
    q = np.array([10.0, 4.0, 4.0])
    view = local_view(net, "A", q, np.array([0.5]))
    assert compute_weights(view).tolist() == [16.0, 12.0]
    assert set(view.downstream_q_hat) == {"3"}


def test_softmax_examples():
    assert allocate_cyclic_bp([3.0, 3.0], 2.5, 0.0, 30.0) == pytest.approx([0.5, 0.5])
    got = allocate_cyclic_bp([16.0, 12.0], 0.25, 3.0, 30.0)
    assert got == pytest.approx([0.6580, 0.2420], abs=1e-3)
    assert allocate_cyclic_bp([5, -2, 9], 1e-9, 3.0, 30.0) == pytest.approx([0.3] * 3, abs=1e-6)


def test_argmax_examples():
    assert allocate_classic_bp([5, 3], 0, 30).tolist() == [1.0, 0.0]
    assert allocate_classic_bp([3, 3], 0, 30).tolist() == [1.0, 0.0]
    assert allocate_classic_bp([16, 12], 3, 30).tolist() == [0.9, 0.0]


def test_proportional_examples():
    v = JunctionView("A", ("1", "2"), [{"1": 2.0}, {"2": 3.0}], {"1": 10.0, "2": 30.0}, {}, {}, 1.0)
    assert allocate_proportional(v, 0, 30) == pytest.approx([0.25, 0.75])
    zero = JunctionView("A", ("1", "2"), [{"1": 2.0}, {"2": 3.0}], {"1": 0.0, "2": 0.0}, {}, {}, 1.0)
    assert allocate_proportional(zero, 0, 30).tolist() == [0.5, 0.5]
    one = JunctionView("A", ("1",), [{"1": 2.0}], {"1": 5.0}, {}, {}, 1.0)
    assert allocate_proportional(one, 3, 30) == pytest.approx([0.9])
    neg = JunctionView("A", ("1", "2"), [{"1": 2.0}, {"2": 3.0}], {"1": -2.0, "2": 4.0}, {}, {}, 1.0)
    assert allocate_proportional(neg, 0, 30).tolist() == [0.0, 1.0]


def test_greedy_examples():
    def view(a, b):
        return JunctionView("A", ("1", "2"), [{"1": 2.0}, {"2": 3.0}], {"1": a, "2": b}, {}, {}, 1.0)
    assert allocate_greedy(view(10, 30), 0, 30).tolist() == [0.0, 1.0]
    assert allocate_greedy(view(7, 7), 0, 30).tolist() == [1.0, 0.0]
    assert allocate_greedy(view(0, 0), 0, 30).tolist() == [1.0, 0.0]
    assert queue_sum_weights(view(-1, 2)).tolist() == [-1.0, 2.0]


@given(weights, st.floats(1e-6, 50.0), st.sampled_from([0.0, 3.0, 10.0]))
@settings(max_examples=300, deadline=None)
def test_cyclic_simplex(w, eta, lost):
    p = allocate_cyclic_bp(w, eta, lost, 30.0)
    assert abs(p.sum() - (1 - lost / 30.0)) <= 1e-12
    assert np.all(p > 0)


@given(weights, st.floats(-500, 500), st.floats(1e-3, 10.0))
@settings(max_examples=300, deadline=None)
def test_shift_invariance(w, c, eta):
    w = np.array(w)
    assert np.allclose(allocate_cyclic_bp(w + c, eta, 3, 30), allocate_cyclic_bp(w, eta, 3, 30), atol=1e-12)
    # integer weights and shift keep the addition exact, so ties stay ties
    wi, ci = np.round(w), round(c)
    assert np.array_equal(allocate_classic_bp(wi + ci, 3, 30), allocate_classic_bp(wi, 3, 30))


@given(weights, st.integers(0, 5), st.floats(0.0, 100.0), st.floats(1e-3, 5.0))
@settings(max_examples=300, deadline=None)
def test_monotone_in_own_weight(w, k, bump, eta):
    w = np.array(w)
    k %= w.shape[0]
    up = w.copy()
    up[k] += bump
    assert allocate_cyclic_bp(up, eta, 0, 30)[k] >= allocate_cyclic_bp(w, eta, 0, 30)[k] - 1e-15


@given(weights, st.floats(1e-3, 100.0))
@settings(max_examples=300, deadline=None)
def test_entropy_bound(w, eta):
    w = np.array(w)
    p = softmax_shares(w, eta)
    assert p @ w >= w.max() - math.log(w.shape[0]) / eta - 1e-9 * max(1.0, np.abs(w).max())


def test_estimator_examples():
    topo, tr = tandem()
    net = compile_network(topo, tr)
    est = EstimatorState(net, window=3)
    assert est.q_bar.tolist() == [0.5]  # cold start: 1 / (out-degree + 1)

    def rec(dep, phat):
        return StepRecord(0, 1, np.zeros(3), np.zeros(3), np.array([dep, 0.0, 0.0]), np.array([phat]), 0.0)

    for v in (0.2, 0.4, 0.6):
        estimator_update(est, rec(5.0, v))
    assert est.q_bar[0] == pytest.approx(0.4)
    estimator_update(est, rec(0.0, np.nan))
    assert est.q_bar[0] == pytest.approx(0.4)
    estimator_update(est, rec(2.0, 1.0))
    assert est.q_bar[0] == pytest.approx((0.4 + 0.6 + 1.0) / 3)
    assert est.buffer_length(0) == 3

    one = EstimatorState(net, window=1)
    estimator_update(one, rec(1.0, 0.3))
    assert one.q_bar[0] == pytest.approx(0.3)


def test_network_decisions_match_local():
    rng = np.random.default_rng(8)
    for _ in range(20):
        topo, tr, _ = random_instance(rng)
        net = compile_network(topo, tr)
        q = rng.normal(5, 5, net.n_roads)
        qbar = rng.random(net.link_src.shape[0]) * 0.5
        for ctrl in (CyclicBackPressure(0.3), ClassicBackPressure(), Proportional(), Greedy()):
            dec = ctrl.decide(net, q, qbar)
            for j in topo.junctions:
                local = ctrl.decide_local(local_view(net, j.id, q, qbar))
                assert np.allclose(dec.junction(j.id), local, atol=1e-12), ctrl.name


def test_decision_is_local():
    """Changing a queue two hops away never changes a junction's allocation."""
    rng = np.random.default_rng(9)
    topo, tr = tandem()
    net = compile_network(topo, tr)
    base = np.array([5.0, 8.0, 3.0])
    ctrl = CyclicBackPressure()
    before = ctrl.decide(net, base, np.array([1.0])).junction("J2")
    far = base.copy()
    far[0] += rng.uniform(1, 100)  # r1 belongs to J1 and is not downstream of J2
    assert np.array_equal(ctrl.decide(net, far, np.array([1.0])).junction("J2"), before)


def test_make_controller():
    assert make_controller("cyclic_bp", 1.5).eta == 1.5
    assert make_controller("greedy").per_cycle is False
    with pytest.raises(ValueError):
        make_controller("fixed_time")
    with pytest.raises(ValueError):
        CyclicBackPressure(0.0)
