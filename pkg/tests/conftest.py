import numpy as np
import pytest

from cyclicbp.network import InRoad, Junction, NetworkTopology, Phase, TurningMatrix, compile_network

# filled by test_acceptance; printed once at the end of the session
ACCEPTANCE_LINES = []


def single_queue(sigma=4.0, lost=3.0, cycle=30.0):
    topo = NetworkTopology([Junction("J", ["q"], [Phase({"q": sigma})])], [InRoad("q", "J", None, True)], [],
                           cycle, lost)
    return topo, TurningMatrix({})


def tandem():
    """J1 (one phase, rate 4) feeds r2 at J2, which alternates r2 / r3 at rate 5 each."""
    topo = NetworkTopology(
        [Junction("J1", ["r1"], [Phase({"r1": 4})]),
         Junction("J2", ["r2", "r3"], [Phase({"r2": 5}), Phase({"r3": 5})])],
        [InRoad("r1", "J1", None, True), InRoad("r2", "J2", 50), InRoad("r3", "J2", None, True)],
        [("r1", "r2")], 30.0, 0.0)
    return topo, TurningMatrix({("r1", "r2"): 1.0})


def two_phase_pair(lost=0.0, p12=0.5):
    """Junction A with roads 1, 2 (phases (2,0) and (0,3)); road 1 feeds road 3 at junction B."""
    topo = NetworkTopology(
        [Junction("A", ["1", "2"], [Phase({"1": 2}), Phase({"2": 3})]),
         Junction("B", ["3"], [Phase({"3": 6})])],
        [InRoad("1", "A", None, True), InRoad("2", "A", None, True), InRoad("3", "B", 40)],
        [("1", "3")], 30.0, lost)
    return topo, TurningMatrix({("1", "3"): p12})


def random_instance(rng, max_phases=6):
    """Small random network: 1-3 junctions, 1-3 roads each, total phases <= max_phases, draining turning."""
    while True:
        n_j = int(rng.integers(1, 4))
        phases_left = max_phases
        junctions, roads = [], []
        for j in range(n_j):
            members = [f"j{j}r{k}" for k in range(int(rng.integers(1, 4)))]
            n_ph = int(rng.integers(1, min(3, phases_left - (n_j - j - 1)) + 1))
            phases_left -= n_ph
            phs = []
            for _ in range(n_ph):
                on = [m for m in members if rng.random() < 0.6] or [members[int(rng.integers(len(members)))]]
                phs.append(Phase({m: float(rng.uniform(1, 10)) for m in on}))
            junctions.append(Junction(f"j{j}", members, phs))
            roads += [InRoad(m, f"j{j}", None, True) for m in members]
        links, p_bar = [], {}
        for r in roads:
            others = [o for o in roads if o.junction != r.junction]
            if not others:
                continue
            targets = rng.choice(len(others), size=min(len(others), int(rng.integers(0, 3))), replace=False)
            if len(targets) == 0:
                continue
            shares = rng.dirichlet(np.ones(len(targets))) * rng.uniform(0.2, 0.9)
            for t, s in zip(targets, shares):
                links.append((r.id, others[t].id))
                p_bar[(r.id, others[t].id)] = float(s)
        topo = NetworkTopology(junctions, roads, links, 30.0, float(rng.choice([0.0, 3.0, 6.0])))
        turning = TurningMatrix(p_bar)
        try:
            net = compile_network(topo, turning)
        except ValueError:
            continue
        a = rng.uniform(0, 3, size=net.n_roads)
        return topo, turning, a


@pytest.fixture
def single():
    return single_queue()


@pytest.fixture
def tandem_net():
    return tandem()


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
