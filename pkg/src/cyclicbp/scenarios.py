"""Scenario files and scenario generators.

A scenario bundles a topology, a mean turning matrix, a demand profile, a
measurement model, a controller configuration and run settings. On disk it
is JSON with one top-level section per component and a ``schema_version``::

    {"schema_version": 1,
     "topology": {...}, "turning": {...}, "demand": {...},
     "measurement": {...}, "controller": {...}, "run": {...}}

Unknown fields, a missing seed, or negative rates are rejected with a
``SchemaError`` naming the offending path (``demand.segments[1].rates.x``).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

from .controllers import DEFAULT_ETA, DEFAULT_WINDOW, POLICIES
from .dynamics import MODES, DemandProfile, DemandSegment, MeasurementModel
from .network import InRoad, Junction, NetworkTopology, Phase, TurningMatrix, validate_topology

SCHEMA_VERSION = 1


class SchemaError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


class BadDimensions(ValueError):
    pass


@dataclass(frozen=True)
class ControllerConfig:
    policy: str = "cyclic_bp"
    eta: float = DEFAULT_ETA
    k: int = DEFAULT_WINDOW
    decision_interval: float | None = None  # seconds; None = one decision per cycle


@dataclass(frozen=True)
class Scenario:
    topology: NetworkTopology
    turning: TurningMatrix
    demand: DemandProfile
    seed: int
    measurement: MeasurementModel = MeasurementModel()
    controller: ControllerConfig = ControllerConfig()
    horizon_cycles: int = 1000
    mode: str = "fluid"
    initial_queues: dict = field(default_factory=dict)
    name: str = ""

    def __hash__(self):
        return hash((self.name, self.seed, self.horizon_cycles, self.mode))

    def problems(self) -> list[str]:
        out = [f"{e.code}: {e}" for e in validate_topology(self.topology, self.turning).errors]
        ingress = [r.id for r in self.topology.in_roads if r.is_ingress]
        out += self.demand.problems(self.topology.road_ids, ingress)
        return out


# --- serialization -------------------------------------------------------------

def scenario_to_dict(sc: Scenario) -> dict:
    topo = sc.topology
    return {
        "schema_version": SCHEMA_VERSION,
        "name": sc.name,
        "topology": {
            "cycle_length": topo.cycle_length,
            "lost_time": topo.lost_time,
            "in_roads": [
                {"id": r.id, "junction": r.junction, "capacity": r.capacity, "is_ingress": r.is_ingress, "lanes": r.lanes}
                for r in topo.in_roads
            ],
            "junctions": [
                {"id": j.id, "in_roads": list(j.in_roads),
                 "phases": [{"name": ph.name, "rates": dict(ph.rates)} for ph in j.phases]}
                for j in topo.junctions
            ],
            "links": [list(l) for l in topo.links],
        },
        "turning": {"p_bar": [[a, b, v] for (a, b), v in sc.turning.p_bar.items()]},
        "demand": {
            "period": sc.demand.period,
            "segments": [{"start": s.start, "end": s.end, "rates": dict(s.rates)} for s in sc.demand.segments],
        },
        "measurement": {"delta_max": sc.measurement.delta_max},
        "controller": {
            "policy": sc.controller.policy,
            "eta": sc.controller.eta,
            "k": sc.controller.k,
            "decision_interval": sc.controller.decision_interval,
        },
        "run": {
            "horizon_cycles": sc.horizon_cycles,
            "seed": sc.seed,
            "mode": sc.mode,
            "initial_queues": dict(sc.initial_queues),
        },
    }


def dumps(sc: Scenario) -> str:
    return json.dumps(scenario_to_dict(sc), indent=2) + "\n"


def save(sc: Scenario, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(sc))


def _keys(d, path, required=(), optional=()):
    if not isinstance(d, dict):
        raise SchemaError(path, f"expected an object, got {type(d).__name__}")
    allowed = set(required) | set(optional)
    for k in d:
        if k not in allowed:
            raise SchemaError(f"{path}.{k}" if path else k, "unknown field")
    for k in required:
        if k not in d:
            raise SchemaError(f"{path}.{k}" if path else k, "missing required field")
    return d


def _num(v, path, lo=None, allow_none=False, integer=False):
    if v is None and allow_none:
        return None
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise SchemaError(path, f"expected a number, got {v!r}")
    if integer and (not float(v).is_integer()):
        raise SchemaError(path, f"expected an integer, got {v!r}")
    if not math.isfinite(v):
        raise SchemaError(path, "must be finite")
    if lo is not None and v < lo:
        raise SchemaError(path, f"must be >= {lo}, got {v!r}")
    return int(v) if integer else float(v)


def _str(v, path):
    if not isinstance(v, str) or not v:
        raise SchemaError(path, f"expected a non-empty string, got {v!r}")
    return v


def _list(v, path):
    if not isinstance(v, list):
        raise SchemaError(path, f"expected a list, got {type(v).__name__}")
    return v


def scenario_from_dict(doc: dict) -> Scenario:
    _keys(doc, "", ["schema_version", "topology", "turning", "demand", "run"], ["measurement", "controller", "name"])
    if doc["schema_version"] != SCHEMA_VERSION:
        raise SchemaError("schema_version", f"unsupported version {doc['schema_version']!r}")

    t = _keys(doc["topology"], "topology", ["in_roads", "junctions", "links"], ["cycle_length", "lost_time"])
    roads = []
    for k, r in enumerate(_list(t["in_roads"], "topology.in_roads")):
        p = f"topology.in_roads[{k}]"
        _keys(r, p, ["id", "junction"], ["capacity", "is_ingress", "lanes"])
        is_ingress = r.get("is_ingress", False)
        if not isinstance(is_ingress, bool):
            raise SchemaError(f"{p}.is_ingress", "expected true or false")
        roads.append(InRoad(_str(r["id"], f"{p}.id"), _str(r["junction"], f"{p}.junction"),
                            _num(r.get("capacity"), f"{p}.capacity", lo=0, allow_none=True), is_ingress,
                            _num(r.get("lanes", 1), f"{p}.lanes", lo=1, integer=True)))
    junctions = []
    for k, j in enumerate(_list(t["junctions"], "topology.junctions")):
        p = f"topology.junctions[{k}]"
        _keys(j, p, ["id", "in_roads", "phases"])
        phases = []
        for m, ph in enumerate(_list(j["phases"], f"{p}.phases")):
            pp = f"{p}.phases[{m}]"
            _keys(ph, pp, ["rates"], ["name"])
            rates = _keys(ph["rates"], f"{pp}.rates", optional=ph["rates"].keys() if isinstance(ph["rates"], dict) else ())
            phases.append(Phase({rid: _num(v, f"{pp}.rates.{rid}", lo=0) for rid, v in rates.items()}, ph.get("name", "")))
        junctions.append(Junction(_str(j["id"], f"{p}.id"),
                                  tuple(_str(x, f"{p}.in_roads[{m}]") for m, x in enumerate(_list(j["in_roads"], f"{p}.in_roads"))),
                                  tuple(phases)))
    links = []
    for k, l in enumerate(_list(t["links"], "topology.links")):
        if not (isinstance(l, list) and len(l) == 2):
            raise SchemaError(f"topology.links[{k}]", "expected [from, to]")
        links.append((_str(l[0], f"topology.links[{k}][0]"), _str(l[1], f"topology.links[{k}][1]")))
    topo = NetworkTopology(tuple(junctions), tuple(roads), tuple(links),
                           _num(t.get("cycle_length", 30.0), "topology.cycle_length", lo=0),
                           _num(t.get("lost_time", 0.0), "topology.lost_time", lo=0))

    tr = _keys(doc["turning"], "turning", ["p_bar"])
    p_bar = {}
    for k, e in enumerate(_list(tr["p_bar"], "turning.p_bar")):
        if not (isinstance(e, list) and len(e) == 3):
            raise SchemaError(f"turning.p_bar[{k}]", "expected [from, to, proportion]")
        p_bar[(_str(e[0], f"turning.p_bar[{k}][0]"), _str(e[1], f"turning.p_bar[{k}][1]"))] = _num(e[2], f"turning.p_bar[{k}][2]", lo=0)
    turning = TurningMatrix(p_bar)

    d = _keys(doc["demand"], "demand", ["segments"], ["period"])
    segs = []
    for k, s in enumerate(_list(d["segments"], "demand.segments")):
        p = f"demand.segments[{k}]"
        _keys(s, p, ["start", "end", "rates"])
        rates = s["rates"]
        if not isinstance(rates, dict):
            raise SchemaError(f"{p}.rates", "expected an object")
        segs.append(DemandSegment(_num(s["start"], f"{p}.start", lo=0, integer=True),
                                  _num(s["end"], f"{p}.end", lo=0, integer=True),
                                  {rid: _num(v, f"{p}.rates.{rid}", lo=0) for rid, v in rates.items()}))
    demand = DemandProfile(tuple(segs), _num(d.get("period"), "demand.period", lo=1, allow_none=True, integer=True))

    meas = _keys(doc.get("measurement", {}), "measurement", optional=["delta_max"])
    measurement = MeasurementModel(_num(meas.get("delta_max", 0.0), "measurement.delta_max", lo=0))

    c = _keys(doc.get("controller", {}), "controller", optional=["policy", "eta", "k", "decision_interval"])
    policy = c.get("policy", "cyclic_bp")
    if policy not in POLICIES:
        raise SchemaError("controller.policy", f"unknown policy {policy!r}; choose from {sorted(POLICIES)}")
    eta = _num(c.get("eta", DEFAULT_ETA), "controller.eta", lo=0)
    if eta <= 0:
        raise SchemaError("controller.eta", "must be > 0")
    controller = ControllerConfig(policy, eta, _num(c.get("k", DEFAULT_WINDOW), "controller.k", lo=1, integer=True),
                                  _num(c.get("decision_interval"), "controller.decision_interval", lo=0, allow_none=True))

    run = _keys(doc["run"], "run", ["seed"], ["horizon_cycles", "mode", "initial_queues"])
    mode = run.get("mode", "fluid")
    if mode not in MODES:
        raise SchemaError("run.mode", f"must be one of {list(MODES)}")
    iq = run.get("initial_queues", {})
    if not isinstance(iq, dict):
        raise SchemaError("run.initial_queues", "expected an object")
    sc = Scenario(
        topology=topo,
        turning=turning,
        demand=demand,
        seed=_num(run["seed"], "run.seed", lo=0, integer=True),
        measurement=measurement,
        controller=controller,
        horizon_cycles=_num(run.get("horizon_cycles", 1000), "run.horizon_cycles", lo=1, integer=True),
        mode=mode,
        initial_queues={rid: _num(v, f"run.initial_queues.{rid}", lo=0) for rid, v in iq.items()},
        name=doc.get("name", "") or "",
    )
    return sc


def loads(text: str) -> Scenario:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"line {exc.lineno} column {exc.colno}", exc.msg) from exc
    return scenario_from_dict(doc)


def load(path) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())


# --- transforms ------------------------------------------------------------------

def scale_demand(sc: Scenario, factor: float) -> Scenario:
    segs = tuple(DemandSegment(s.start, s.end, {k: v * factor for k, v in s.rates.items()}) for s in sc.demand.segments)
    return replace(sc, demand=DemandProfile(segs, sc.demand.period))


def rescale_cycle(sc: Scenario, cycle_length: float) -> Scenario:
    """Change the cycle length while keeping saturation flows and demand per second fixed.

    Per-cycle rates scale by ``new/old``; cycle counts (horizon, demand
    breakpoints) scale by ``old/new`` so the simulated wall-clock time is
    preserved. Breakpoints must stay whole cycles.
    """
    old = sc.topology.cycle_length
    if cycle_length == old:
        return sc
    f = cycle_length / old

    def cycles(n, what):
        v = n / f
        if abs(v - round(v)) > 1e-9:
            raise ValueError(f"{what} of {n} cycles is not a whole number of {cycle_length}s cycles")
        return int(round(v))

    if sc.topology.lost_time >= cycle_length:
        raise ValueError("lost time must stay below the cycle length")
    junctions = tuple(Junction(j.id, j.in_roads, tuple(Phase({r: v * f for r, v in ph.rates.items()}, ph.name)
                                                        for ph in j.phases)) for j in sc.topology.junctions)
    topo = replace(sc.topology, junctions=junctions, cycle_length=float(cycle_length))
    segs = tuple(DemandSegment(cycles(s.start, "demand breakpoint"), cycles(s.end, "demand breakpoint"),
                               {k: v * f for k, v in s.rates.items()}) for s in sc.demand.segments)
    period = cycles(sc.demand.period, "demand period") if sc.demand.period else None
    horizon = max(1, int(math.floor(sc.horizon_cycles / f + 1e-9)))
    return replace(sc, topology=topo, demand=DemandProfile(segs, period), horizon_cycles=horizon)


# --- generators ------------------------------------------------------------------

SATURATION_PER_LANE = 0.5  # vehicles per second of green
LANE_CAPACITY = 50.0       # vehicles per lane on a 375 m internal link
MOVEMENT_SHARES = {"through": 0.6, "right": 0.2, "left": 0.2}

# compass helpers: heading after entering from a side, and turns (right-hand traffic)
_HEADING_FROM = {"N": "S", "S": "N", "E": "W", "W": "E"}
_LEFT = {"N": "W", "W": "S", "S": "E", "E": "N"}
_RIGHT = {v: k for k, v in _LEFT.items()}
_OPPOSITE = {"N": "S", "S": "N", "E": "W", "W": "E"}


def _two_junction_default_demand(peak_every: int = 600) -> DemandProfile:
    # artifact-chosen values (vehicles per 30 s cycle); the figure-only demands are not recoverable
    peak = {
        "J2_N_T": 11.0, "J2_S_T": 11.0, "J2_N_L": 1.5, "J2_S_L": 1.5,
        "J1_W_T": 5.0, "J1_W_L": 1.0, "J2_E_T": 3.0, "J2_E_L": 0.8,
        "J1_N_T": 2.0, "J1_N_L": 1.5, "J1_S_T": 2.0, "J1_S_L": 0.8,
    }
    off_peak = {k: 0.5 * v for k, v in peak.items()}
    return DemandProfile.alternating(peak, off_peak, peak_every)


def generate_two_junction(demand: DemandProfile | dict | None = None, cycle_length: float = 30.0,
                          lost_time: float = 0.0, seed: int = 1, horizon_cycles: int = 2400,
                          mode: str = "fluid", controller: ControllerConfig = ControllerConfig(),
                          shares: dict = MOVEMENT_SHARES) -> Scenario:
    """Two signalized junctions joined by a two-way internal road.

    Each external approach (J1 north/south/west, J2 north/south/east) is split
    into a through+right in-road ``_T`` and a left-turn in-road ``_L``: 12
    unbounded ingress in-roads. The connecting road is split the same way in
    each direction: 4 internal in-roads of 50 vehicles per lane. The
    north-south road through J2 has two through lanes (double saturation
    rate). Phases: north-south then east-west. ``demand`` may be a profile or
    a dict of constant per-cycle rates; default is the documented
    artifact-chosen peak/off-peak set.
    """
    sat = SATURATION_PER_LANE * cycle_length
    neighbours = {("J1", "E"): "J2", ("J2", "W"): "J1"}
    external = {"J1": ("N", "S", "W"), "J2": ("N", "S", "E")}
    roads, junctions, links, p_bar = [], [], [], {}
    for jid in ("J1", "J2"):
        sides = ("N", "S", "E", "W")
        members = []
        for side in sides:
            ingress = side in external[jid]
            lanes_t = 2 if (jid == "J2" and side in ("N", "S")) else 1
            for lane, lanes in (("T", lanes_t), ("L", 1)):
                rid = f"{jid}_{side}_{lane}"
                cap = None if ingress else LANE_CAPACITY * lanes
                roads.append(InRoad(rid, jid, cap, ingress, lanes))
                members.append(rid)
        ns = {r.id: sat * r.lanes for r in roads if r.junction == jid and r.id.split("_")[1] in ("N", "S")}
        ew = {r.id: sat * r.lanes for r in roads if r.junction == jid and r.id.split("_")[1] in ("E", "W")}
        junctions.append(Junction(jid, tuple(members), (Phase(ns, "NS"), Phase(ew, "EW"))))

    tr_share = shares["through"] + shares["right"]
    lane_split = {"T": tr_share, "L": shares["left"]}
    for r in roads:
        jid, side, lane = r.id.split("_")
        heading = _HEADING_FROM[side]
        moves = ({"through": shares["through"] / tr_share, "right": shares["right"] / tr_share}
                 if lane == "T" else {"left": 1.0})
        for move, prob in moves.items():
            out = heading if move == "through" else (_LEFT[heading] if move == "left" else _RIGHT[heading])
            nxt = neighbours.get((jid, out))
            if nxt is None:
                continue  # leaves the network
            entry_side = _OPPOSITE[out]
            for dl, split in lane_split.items():
                dst = f"{nxt}_{entry_side}_{dl}"
                key = (r.id, dst)
                if key not in p_bar:
                    links.append(key)
                p_bar[key] = p_bar.get(key, 0.0) + prob * split
    topo = NetworkTopology(tuple(junctions), tuple(roads), tuple(links), float(cycle_length), float(lost_time))
    if demand is None:
        demand = _two_junction_default_demand()
        if cycle_length != 30.0:
            demand = DemandProfile(tuple(DemandSegment(s.start, s.end, {k: v * cycle_length / 30.0 for k, v in s.rates.items()})
                                         for s in demand.segments), demand.period)
    elif isinstance(demand, dict):
        demand = DemandProfile.constant(demand)
    return Scenario(topo, TurningMatrix(p_bar), demand, seed, MeasurementModel(), controller,
                    horizon_cycles, mode, {}, "two_junction")


def generate_grid(rows: int = 4, cols: int = 4, capacity_per_lane: float = LANE_CAPACITY, lanes: int = 1,
                  demand: DemandProfile | float | dict = 3.0, cycle_length: float = 30.0, lost_time: float = 0.0,
                  sink_share: float = 0.1, shares: dict = MOVEMENT_SHARES, seed: int = 1,
                  horizon_cycles: int = 2000, mode: str = "fluid",
                  controller: ControllerConfig = ControllerConfig()) -> Scenario:
    """Grid of four-way junctions with two-way roads and two-phase signals.

    One in-road per approach (``G{r}_{c}_{side}``). Approaches on the grid
    boundary are unbounded ingress roads; interior approaches hold
    ``capacity_per_lane * lanes`` vehicles. A vehicle turns through / right /
    left per ``shares``; a turn off the grid leaves the network, and a further
    ``sink_share`` of each movement ends its trip inside the grid.
    ``demand`` is a profile, one rate for every ingress road, or a dict of
    per-road rates (vehicles per cycle).
    """
    if rows < 2 or cols < 2:
        raise BadDimensions(f"grid needs at least 2x2 junctions, got {rows}x{cols}")
    if not 0 <= sink_share < 1:
        raise ValueError("sink_share must be in [0, 1)")
    sat = SATURATION_PER_LANE * cycle_length * lanes
    step = {"N": (-1, 0), "S": (1, 0), "E": (0, 1), "W": (0, -1)}

    def jid(r, c):
        return f"G{r}_{c}"

    def inside(r, c):
        return 0 <= r < rows and 0 <= c < cols

    roads, junctions, links, p_bar = [], [], [], {}
    for r in range(rows):
        for c in range(cols):
            members = []
            for side in ("N", "S", "E", "W"):
                dr, dc = step[side]
                ingress = not inside(r + dr, c + dc)
                rid = f"{jid(r, c)}_{side}"
                roads.append(InRoad(rid, jid(r, c), None if ingress else capacity_per_lane * lanes, ingress, lanes))
                members.append(rid)
            ns = {f"{jid(r, c)}_N": sat, f"{jid(r, c)}_S": sat}
            ew = {f"{jid(r, c)}_E": sat, f"{jid(r, c)}_W": sat}
            junctions.append(Junction(jid(r, c), tuple(members), (Phase(ns, "NS"), Phase(ew, "EW"))))
    for road in roads:
        _, rc, side = road.id.split("_", 1)[0], road.id.rsplit("_", 1)[0], road.id.rsplit("_", 1)[1]
        r, c = (int(x) for x in rc[1:].split("_"))
        heading = _HEADING_FROM[side]
        for move, prob in (("through", shares["through"]), ("left", shares["left"]), ("right", shares["right"])):
            out = heading if move == "through" else (_LEFT[heading] if move == "left" else _RIGHT[heading])
            dr, dc = step[out]
            if not inside(r + dr, c + dc):
                continue
            dst = f"{jid(r + dr, c + dc)}_{_OPPOSITE[out]}"
            links.append((road.id, dst))
            p_bar[(road.id, dst)] = (1.0 - sink_share) * prob
    topo = NetworkTopology(tuple(junctions), tuple(roads), tuple(links), float(cycle_length), float(lost_time))
    if isinstance(demand, DemandProfile):
        profile = demand
    elif isinstance(demand, dict):
        profile = DemandProfile.constant(demand)
    else:
        profile = DemandProfile.constant({rd.id: float(demand) for rd in roads if rd.is_ingress})
    return Scenario(topo, TurningMatrix(p_bar), profile, seed, MeasurementModel(), controller,
                    horizon_cycles, mode, {}, f"grid_{rows}x{cols}")


def grid_counts(rows: int, cols: int) -> dict:
    """Closed-form element counts of ``generate_grid``."""
    interior_pairs = rows * (cols - 1) + cols * (rows - 1)
    return {
        "junctions": rows * cols,
        "interior_road_pairs": interior_pairs,
        "interior_in_roads": 2 * interior_pairs,
        "ingress_in_roads": 2 * (rows + cols),
        "in_roads": 4 * rows * cols,
        "phases": 2 * rows * cols,
    }


# --- running -------------------------------------------------------------------

def run_scenario(sc: Scenario, keep_records: bool = False):
    """Validate, compile and run a scenario; returns the ``RunResult``."""
    from .controllers import make_controller
    from .dynamics import initial_state, run_horizon
    from .network import compile_network

    net = compile_network(sc.topology, sc.turning)
    bad = sc.demand.problems(net.road_ids, [r.id for r in sc.topology.in_roads if r.is_ingress])
    if bad:
        raise ValueError("; ".join(bad))
    q0 = None
    if sc.initial_queues:
        idx = {rid: i for i, rid in enumerate(net.road_ids)}
        q0 = [0.0] * net.n_roads
        for rid, v in sc.initial_queues.items():
            q0[idx[rid]] = v
    state = initial_state(net, sc.seed, sc.mode, q0)
    ctrl = make_controller(sc.controller.policy, sc.controller.eta)
    return run_horizon(state, net, sc.demand.compile(net.road_ids), ctrl, sc.horizon_cycles,
                       sc.controller.decision_interval, sc.measurement, sc.controller.k, keep_records)
