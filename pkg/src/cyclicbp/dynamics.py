"""Store-and-forward queue dynamics.

One engine step covers a fraction ``frac`` of a traffic cycle (``frac == 1``
for per-cycle controllers, ``d/T`` when a cycle is split into decision slots
of ``d`` seconds). Within a step, departures are taken from the step-start
snapshot, then external arrivals and routed inflow are added; served vehicles
reach the downstream in-road at the next step.

Two modes:

``fluid``    real-valued queues; service, turning and arrivals equal their means
``integer``  whole vehicles; Bernoulli-rounded service, multinomial turning,
             Poisson arrivals, per-vehicle entry tags for travel times
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .controllers import Controller, EstimatorState, PolicyDecision, estimator_update
from .network import CompiledNetwork

FLUID = "fluid"
INTEGER = "integer"
MODES = (FLUID, INTEGER)

_STREAM_KINDS = {"arrivals": 0, "service": 1, "turning": 2, "measurement": 3}


class NonIntegralInterval(ValueError):
    pass


class DemandError(ValueError):
    pass


@dataclass(frozen=True)
class MeasurementModel:
    """Symmetric uniform queue-measurement error bounded by ``delta_max``."""

    delta_max: float = 0.0

    def __post_init__(self):
        if not (self.delta_max >= 0 and math.isfinite(self.delta_max)):
            raise ValueError("delta_max must be a finite non-negative number")


@dataclass(frozen=True)
class DemandSegment:
    start: int
    end: int
    rates: dict  # in-road id -> mean external arrivals per cycle

    def __post_init__(self):
        object.__setattr__(self, "rates", {str(k): float(v) for k, v in dict(self.rates).items()})

    def __hash__(self):
        return hash((self.start, self.end, tuple(sorted(self.rates.items()))))


@dataclass(frozen=True)
class DemandProfile:
    """Piecewise-constant arrival rates (vehicles per cycle) per ingress in-road.

    Segments must tile ``[0, end_of_last)`` without gaps or overlap. With
    ``period`` set the schedule repeats every ``period`` cycles (period must
    equal the end of the last segment); otherwise the last segment's rates
    hold past its end.
    """

    segments: tuple[DemandSegment, ...]
    period: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))

    @classmethod
    def constant(cls, rates: dict, length: int = 1) -> "DemandProfile":
        return cls((DemandSegment(0, length, rates),))

    @classmethod
    def alternating(cls, peak: dict, off_peak: dict, every: int) -> "DemandProfile":
        return cls((DemandSegment(0, every, peak), DemandSegment(every, 2 * every, off_peak)), period=2 * every)

    def problems(self, road_ids: Sequence[str] = (), ingress: Sequence[str] | None = None) -> list[str]:
        out = []
        if not self.segments:
            return ["demand has no segments"]
        expect = 0
        for k, seg in enumerate(self.segments):
            if seg.start != expect:
                out.append(f"segments[{k}] starts at {seg.start}, expected {expect} (gap or overlap)")
            if seg.end <= seg.start:
                out.append(f"segments[{k}] is empty or reversed ({seg.start}, {seg.end})")
            for rid, v in seg.rates.items():
                if not (math.isfinite(v) and v >= 0):
                    out.append(f"segments[{k}].rates[{rid!r}] = {v!r} must be finite and >= 0")
                if road_ids and rid not in road_ids:
                    out.append(f"segments[{k}].rates names unknown in-road {rid!r}")
                elif ingress is not None and rid not in ingress and v > 0:
                    out.append(f"segments[{k}].rates: {rid!r} is not an ingress in-road")
            expect = seg.end
        if self.period is not None and self.period != expect:
            out.append(f"period {self.period} must equal the end of the last segment ({expect})")
        return out

    def compile(self, road_ids: Sequence[str]) -> "CompiledDemand":
        idx = {r: k for k, r in enumerate(road_ids)}
        starts = np.array([s.start for s in self.segments], dtype=np.int64)
        rates = np.zeros((len(self.segments), len(road_ids)))
        for k, seg in enumerate(self.segments):
            for rid, v in seg.rates.items():
                rates[k, idx[rid]] = v
        return CompiledDemand(starts, rates, self.period)

    def segment_rates(self, road_ids: Sequence[str]) -> np.ndarray:
        return self.compile(road_ids).rates


@dataclass
class CompiledDemand:
    starts: np.ndarray
    rates: np.ndarray
    period: int | None

    def at(self, cycle: int) -> np.ndarray:
        if self.period:
            cycle = cycle % self.period
        k = int(np.searchsorted(self.starts, cycle, side="right")) - 1
        return self.rates[max(k, 0)]


class RngStreams:
    """Independent generators per (kind, in-road), derived from one seed.

    Each stream's seed depends only on ``(seed, kind, road)``, so draws on one
    stream never shift another.
    """

    def __init__(self, seed: int, n_roads: int):
        self.seed = int(seed)
        self.n_roads = n_roads
        self._gens = {
            kind: [np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(code, i))) for i in range(n_roads)]
            for kind, code in _STREAM_KINDS.items()
        }

    def __getitem__(self, kind: str) -> list[np.random.Generator]:
        return self._gens[kind]


@dataclass
class SimState:
    t: float  # elapsed cycles
    q: np.ndarray
    streams: RngStreams
    mode: str = FLUID
    tags: list[deque] | None = None  # integer mode: entry time (cycles) per queued vehicle
    cum_arrivals: float = 0.0
    cum_exits: float = 0.0

    @property
    def q_sigma(self) -> float:
        return float(self.q.sum())

    def copy(self) -> "SimState":
        tags = [deque(d) for d in self.tags] if self.tags is not None else None
        return SimState(self.t, self.q.copy(), self.streams, self.mode, tags, self.cum_arrivals, self.cum_exits)


def initial_state(net: CompiledNetwork, seed: int, mode: str = FLUID, q0=None) -> SimState:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    q = np.zeros(net.n_roads) if q0 is None else np.array(q0, dtype=float)
    if q.shape != (net.n_roads,) or np.any(q < 0):
        raise ValueError("initial queues must be a non-negative vector over the in-roads")
    tags = None
    if mode == INTEGER:
        if np.any(q != np.floor(q)):
            raise ValueError("integer mode needs whole-vehicle initial queues")
        tags = [deque([0.0] * int(v)) for v in q]
    cum = float(q.sum())  # initial vehicles count as arrivals for conservation
    return SimState(0.0, q, RngStreams(seed, net.n_roads), mode, tags, cum, 0.0)


@dataclass
class StepRecord:
    t: float
    frac: float
    arrivals: np.ndarray
    potential: np.ndarray
    departures: np.ndarray
    p_hat: np.ndarray  # per link; NaN where the source had no departures
    exits: float
    travel_times: list = field(default_factory=list)  # integer mode, cycles


def measure_queues(state: SimState, model: MeasurementModel) -> np.ndarray:
    """Exact queues plus fresh bounded noise; no clamping, so results may be negative."""
    if model.delta_max == 0:
        return state.q.copy()
    gens = state.streams["measurement"]
    n = state.q.shape[0]
    if state.mode == INTEGER:
        b = int(math.floor(model.delta_max))
        noise = np.array([gens[i].integers(-b, b, endpoint=True) for i in range(n)], dtype=float)
    else:
        d = model.delta_max
        noise = np.array([gens[i].uniform(-d, d) for i in range(n)])
    return state.q + noise


def realize_service(state: SimState, net: CompiledNetwork, allocation: PolicyDecision, mode: str | None = None,
                    frac: float = 1.0) -> np.ndarray:
    """Potential service per in-road; the mean is the rate-weighted green share."""
    mode = mode or state.mode
    m = kernels.service_means(allocation.values, net.ent_phase, net.ent_road, net.ent_rate, net.n_roads, frac)
    if mode == FLUID:
        return m
    base = np.floor(m)
    rem = m - base
    gens = state.streams["service"]
    extra = np.array([gens[i].random() < rem[i] if rem[i] > 0 else False for i in range(m.shape[0])], dtype=float)
    return base + extra


def step(state: SimState, net: CompiledNetwork, demand: CompiledDemand, allocation: PolicyDecision,
         mode: str | None = None, frac: float = 1.0) -> tuple[SimState, StepRecord]:
    """Advance one engine step; returns the new state (the input is left untouched) and its record."""
    mode = mode or state.mode
    s = realize_service(state, net, allocation, mode, frac)
    rate = demand.at(int(math.floor(state.t + 1e-9))) * frac
    t_next = state.t + frac
    if mode == FLUID:
        q_next, served, exits = kernels.fluid_transfer(state.q, s, rate, net.link_src, net.link_dst,
                                                       net.p_bar, net.exit_share)
        p_hat = np.where(served[net.link_src] > 0, net.p_bar, np.nan)
        new = SimState(t_next, q_next, state.streams, mode, None,
                       state.cum_arrivals + float(rate.sum()), state.cum_exits + exits)
        return new, StepRecord(state.t, frac, rate, s, served, p_hat, exits)
    return _integer_step(state, net, s, rate, frac, t_next)


def _integer_step(state, net, s, rate, frac, t_next):
    q = state.q
    n = q.shape[0]
    served = np.minimum(s, q)
    tags = [deque(d) for d in state.tags]
    inflow_tags: list[list[float]] = [[] for _ in range(n)]
    inflow = np.zeros(n)
    p_hat = np.full(net.link_src.shape[0], np.nan)
    exits = 0
    travel = []
    turn = state.streams["turning"]
    for i in np.flatnonzero(served > 0):
        d = int(served[i])
        lo, hi = int(net.link_ptr[i]), int(net.link_ptr[i + 1])
        probs = np.append(net.p_bar[lo:hi], net.exit_share[i])
        probs = probs / probs.sum()
        counts = turn[i].multinomial(d, probs)
        p_hat[lo:hi] = counts[:-1] / d
        leaving = [tags[i].popleft() for _ in range(d)]
        dest = np.repeat(np.arange(hi - lo + 1), counts)
        if np.count_nonzero(counts) > 1:
            turn[i].shuffle(dest)
        for tag, k in zip(leaving, dest):
            if k == hi - lo:
                travel.append(t_next - tag)
            else:
                inflow_tags[net.link_dst[lo + k]].append(tag)
        inflow[net.link_dst[lo:hi]] += counts[:-1]
        exits += int(counts[-1])
    arr_gens = state.streams["arrivals"]
    arrivals = np.array([arr_gens[i].poisson(rate[i]) if rate[i] > 0 else 0 for i in range(n)], dtype=float)
    for i in range(n):
        if inflow_tags[i]:
            tags[i].extend(inflow_tags[i])
        if arrivals[i]:
            tags[i].extend([t_next] * int(arrivals[i]))
    q_next = q - served + arrivals + inflow
    new = SimState(t_next, q_next, state.streams, INTEGER, tags,
                   state.cum_arrivals + float(arrivals.sum()), state.cum_exits + exits)
    return new, StepRecord(state.t, frac, arrivals, s, served, p_hat, float(exits), travel)


def step_schedule(cycle_length: float, decision_interval: float | None, per_cycle: bool) -> tuple[float, int]:
    """``(frac, steps_per_decision)`` for a decision interval in seconds.

    The interval must divide the cycle or be a whole number of cycles.
    """
    if decision_interval is None:
        decision_interval = cycle_length
    if not decision_interval > 0:
        raise NonIntegralInterval("decision interval must be positive")
    ratio = decision_interval / cycle_length
    if ratio >= 1:
        n = round(ratio)
        if abs(n - ratio) > 1e-9:
            raise NonIntegralInterval(f"decision interval {decision_interval}s is not a whole number of {cycle_length}s cycles")
        return 1.0, int(n)
    n = round(1 / ratio)
    if abs(n * decision_interval - cycle_length) > 1e-9 * cycle_length:
        raise NonIntegralInterval(f"decision interval {decision_interval}s does not divide the {cycle_length}s cycle")
    return 1.0 / n, 1


@dataclass
class RunResult:
    """Per-step trajectory arrays plus the per-epoch metrics."""

    net: CompiledNetwork
    controller: str
    mode: str
    frac: float
    steps_per_decision: int
    q: np.ndarray          # (n_steps + 1, n_roads), queue at each step start and the final state
    arrivals: np.ndarray   # (n_steps, n_roads)
    departures: np.ndarray
    exits: np.ndarray      # (n_steps,)
    decisions: int
    travel_times: list
    final_state: SimState
    estimator: EstimatorState
    records: list | None = None
    metrics: object = None

    @property
    def step_times(self) -> np.ndarray:
        return np.arange(self.q.shape[0]) * self.frac

    @property
    def q_sigma(self) -> np.ndarray:
        return self.q.sum(axis=1)


def run_horizon(state: SimState, net: CompiledNetwork, demand: CompiledDemand, controller: Controller,
                horizon_cycles: int, decision_interval: float | None = None,
                measurement: MeasurementModel = MeasurementModel(), window: int = 10,
                keep_records: bool = False) -> RunResult:
    """Run ``horizon_cycles`` cycles under ``controller``.

    ``decision_interval`` is in seconds; ``None`` means one decision per cycle.
    Queues are measured and the controller consulted at each decision epoch;
    the turning estimator is updated after every engine step.
    """
    from .metrics import collect_metrics

    if not (isinstance(horizon_cycles, (int, np.integer)) and horizon_cycles >= 1):
        raise ValueError("horizon must be at least one cycle")
    frac, hold = step_schedule(net.topology.cycle_length, decision_interval, controller.per_cycle)
    steps_per_cycle = round(1 / frac)
    n_steps = int(horizon_cycles) * steps_per_cycle
    if n_steps % hold:
        raise NonIntegralInterval(f"horizon of {horizon_cycles} cycles is not a whole number of decision intervals")
    est = EstimatorState(net, window)
    q_traj = np.empty((n_steps + 1, net.n_roads))
    arr = np.empty((n_steps, net.n_roads))
    dep = np.empty((n_steps, net.n_roads))
    exits = np.empty(n_steps)
    travel: list = []
    records = [] if keep_records else None
    decisions = 0
    allocation = None
    for k in range(n_steps):
        q_traj[k] = state.q
        if k % hold == 0:
            q_hat = measure_queues(state, measurement)
            allocation = controller.decide(net, q_hat, est.q_bar)
            decisions += 1
        state, rec = step(state, net, demand, allocation, state.mode, frac)
        estimator_update(est, rec)
        arr[k] = rec.arrivals
        dep[k] = rec.departures
        exits[k] = rec.exits
        if rec.travel_times:
            travel.extend(rec.travel_times)
        if keep_records:
            records.append(rec)
    q_traj[n_steps] = state.q
    res = RunResult(net, controller.name, state.mode, frac, hold, q_traj, arr, dep, exits, decisions,
                    travel, state, est, records)
    res.metrics = collect_metrics(res)
    return res
