import numpy as np
import pytest

from cyclicbp.network import compile_network
from cyclicbp.stability import (
    TooLarge,
    TrajectoryTooShort,
    brute_force_region,
    drift_diagnostic,
    lemma6_bound,
    max_epsilon,
    max_load_factor,
    profile_margin,
    witness_violations,
)
from cyclicbp.controllers import Proportional
from cyclicbp.dynamics import DemandProfile, initial_state, run_horizon
from cyclicbp.network import InRoad, Junction, NetworkTopology, Phase, TurningMatrix

from conftest import random_instance, single_queue


def test_single_queue_margin(single):
    rep = max_epsilon(*single, {"q": 1.0})
    assert rep.epsilon_star == pytest.approx(2.6, abs=1e-9)
    assert rep.feasible
    assert rep.witness_rho["J"][0] == pytest.approx(0.9)
    assert rep.lemma6_bound == pytest.approx(2.7, abs=1e-9)
    assert not witness_violations(*single, {"q": 1.0}, rep)


def test_tandem_margin(tandem_net):
    a = {"r1": 1.0, "r2": 0.0, "r3": 2.0}
    rep = max_epsilon(*tandem_net, a)
    assert rep.epsilon_star == pytest.approx(2 / 3, abs=1e-9)
    assert rep.epsilon_star <= rep.lemma6_bound + 1e-9
    assert not witness_violations(*tandem_net, a, rep)
    assert max_load_factor(*tandem_net, a) == pytest.approx(5 / 3)


def test_literal_bound_is_not_an_upper_bound_on_tandem(tandem_net):
    """Without the all-red option the min-max expression drops below the margin (see README)."""
    a = {"r1": 1.0, "r3": 2.0}
    assert lemma6_bound(*tandem_net, a, idle_floor=False) == pytest.approx(-0.5, abs=1e-9)


def test_zero_demand_is_interior(tandem_net):
    rep = max_epsilon(*tandem_net, None)
    assert rep.epsilon_star > 0
    assert lemma6_bound(*tandem_net) > 0


def test_overload_has_negative_margin(single):
    assert max_epsilon(*single, {"q": 10.0}).epsilon_star < 0
    assert brute_force_region(*single, {"q": 10.0}, 0.05).epsilon <= 0


def test_brute_force_examples(single, tandem_net):
    bf = brute_force_region(*single, {"q": 1.0}, 0.01)
    assert 2.6 - 0.04 <= bf.epsilon <= 2.6 + 1e-12
    bf = brute_force_region(*tandem_net, {"r1": 1.0, "r3": 2.0}, 0.001)
    assert 0.662 <= bf.epsilon <= 2 / 3 + 1e-12


def test_brute_force_too_large():
    topo = NetworkTopology([Junction("J", ["a"], [Phase({"a": 1})] * 7)], [InRoad("a", "J")], [])
    with pytest.raises(TooLarge):
        brute_force_region(topo, TurningMatrix({}), {"a": 0.1}, 0.1)


def test_random_instances_agree_with_grid():
    rng = np.random.default_rng(1234)
    for _ in range(15):
        topo, tr, a = random_instance(rng, max_phases=4)
        net = compile_network(topo, tr)
        rep = max_epsilon(net, None, a, with_bound=False)
        assert not witness_violations(net, None, a, rep)
        res = 0.05
        scale = sum(max(sum(ph.rates.values()) for ph in j.phases) for j in topo.junctions)
        bf = brute_force_region(topo, tr, a, res)
        assert bf.epsilon <= rep.epsilon_star + 1e-9
        assert rep.epsilon_star - bf.epsilon <= res * scale


def test_bound_dominates_full_service_margin():
    """The min-max bound caps the margin when departures equal allocated service (exactly so when L = 0)."""
    rng = np.random.default_rng(99)
    for _ in range(40):
        topo, tr, a = random_instance(rng)
        net = compile_network(topo, tr)
        bound = lemma6_bound(net, None, a)
        fs = max_epsilon(net, None, a, with_bound=False, full_service=True).epsilon_star
        assert fs <= bound + 1e-9
        assert fs <= max_epsilon(net, None, a, with_bound=False).epsilon_star + 1e-9
        if net.green_fraction == 1.0:
            assert fs == pytest.approx(bound, abs=1e-7)


def shared_phase_instance():
    # one phase serves A and B together; A drains into a slow road D
    topo = NetworkTopology(
        [Junction("J1", ["A", "B"], [Phase({"A": 10, "B": 10})]), Junction("J2", ["D"], [Phase({"D": 2})])],
        [InRoad("A", "J1", None, True), InRoad("B", "J1", None, True), InRoad("D", "J2", 50)],
        [("A", "D")], 30.0, 0.0)
    return topo, TurningMatrix({("A", "D"): 1.0})


def test_margin_can_exceed_minmax_bound():
    """Departures below allocated service (a near-empty queue) widen the region past the bound."""
    topo, tr = shared_phase_instance()
    a = {"A": 0.0, "B": 5.0}
    rep = max_epsilon(topo, tr, a)
    assert rep.epsilon_star == pytest.approx(1.0, abs=1e-9)
    assert brute_force_region(topo, tr, a, 0.01).epsilon == pytest.approx(1.0, abs=1e-9)
    assert not witness_violations(topo, tr, a, rep)
    assert rep.lemma6_bound == pytest.approx(-1.5, abs=1e-9)
    assert max_epsilon(topo, tr, a, full_service=True).epsilon_star == pytest.approx(-1.5, abs=1e-9)


def test_shared_phase_instance_is_stable_in_simulation():
    topo, tr = shared_phase_instance()
    net = compile_network(topo, tr)
    run = run_horizon(initial_state(net, 1, "integer"), net,
                      DemandProfile.constant({"A": 0.5, "B": 5.5}).compile(net.road_ids), Proportional(), 3000)
    rep = drift_diagnostic(run)
    assert rep.cesaro_half_change() < 0.05
    assert run.q_sigma[1500:].mean() < 20


def test_overloaded_oracle_respects_nonnegative_departures():
    """Below zero the grid oracle must not let upstream departures go negative."""
    topo = NetworkTopology(
        [Junction("J1", ["u"], [Phase({"u": 4})]), Junction("J2", ["d", "x"], [Phase({"d": 3})])],
        [InRoad("u", "J1", None, True), InRoad("d", "J2", 50), InRoad("x", "J2", None, True)],
        [("u", "d")], 30.0, 0.0)
    tr = TurningMatrix({("u", "d"): 0.5})
    a = {"u": 0.2, "x": 3.0}  # x is never served: eps* = -3
    rep = max_epsilon(topo, tr, a, with_bound=False)
    assert rep.epsilon_star == pytest.approx(-3.0, abs=1e-9)
    assert brute_force_region(topo, tr, a, 0.1).epsilon == pytest.approx(-3.0, abs=1e-9)


def test_profile_margin_is_worst_segment(tandem_net):
    prof = DemandProfile.alternating({"r1": 1.0, "r3": 2.0}, {"r1": 0.5, "r3": 1.0}, 10)
    m = profile_margin(*tandem_net, prof)
    assert m == pytest.approx(2 / 3, abs=1e-9)


def _single_run(rate, cycles=5000):
    topo, tr = single_queue(lost=0.0)
    net = compile_network(topo, tr)
    return run_horizon(initial_state(net, 1, "integer"), net,
                       DemandProfile.constant({"q": rate}).compile(net.road_ids), Proportional(), cycles)


def test_drift_empty_system():
    q = np.zeros((1001, 3))
    rep = drift_diagnostic(q)
    assert np.all(rep.delta_v == 0) and np.all(rep.cesaro == 0)


def test_drift_stable_single_queue():
    rep = drift_diagnostic(_single_run(3.6))
    assert rep.top_quartile_mean_drift < 0


def test_drift_overloaded_single_queue():
    rep = drift_diagnostic(_single_run(4.4))
    assert rep.growth_rate() == pytest.approx(0.4, rel=0.1)
    assert rep.cesaro[-1] > 2 * rep.cesaro[len(rep.cesaro) // 2 - 1] * 0.9


def test_drift_needs_long_trajectory():
    with pytest.raises(TrajectoryTooShort):
        drift_diagnostic(np.zeros((500, 2)))
