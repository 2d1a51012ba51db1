"""Decentralized signal-control policies and the turning-fraction estimator.

Four policies map measured queues to per-junction green-time proportions:

* ``cyclic_bp``    softmax of BackPressure weights, every phase served each cycle
* ``classic_bp``   whole slot to the max-BackPressure-weight phase
* ``proportional`` split proportional to queue sums of each phase
* ``greedy``       whole slot to the phase with the largest queue sum

Per-junction functions (``compute_weights``, ``allocate_*``) take only a
``JunctionView``: the queues of the junction's own in-roads, the queues of
their direct downstream in-roads, and the local turning estimates. The
controller classes evaluate all junctions at once through the kernels and
must agree with the per-junction functions.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .network import CompiledNetwork

DEFAULT_ETA = 2.5
DEFAULT_WINDOW = 10


@dataclass
class PolicyDecision:
    """Green-time proportions for every phase, flat and contiguous per junction."""

    values: np.ndarray
    junction_ptr: np.ndarray
    junction_ids: tuple[str, ...]

    def junction(self, junction_id: str) -> np.ndarray:
        k = self.junction_ids.index(junction_id)
        return self.values[self.junction_ptr[k]:self.junction_ptr[k + 1]]

    def as_dict(self) -> dict[str, list[float]]:
        return {jid: self.junction(jid).tolist() for jid in self.junction_ids}

    @classmethod
    def from_dict(cls, net: CompiledNetwork, props: dict) -> "PolicyDecision":
        ids = tuple(j.id for j in net.topology.junctions)
        vals = np.concatenate([np.asarray(props[j], dtype=float) for j in ids]) if ids else np.zeros(0)
        if vals.shape[0] != net.n_phases:
            raise ValueError("allocation does not match the phase tables")
        return cls(vals, net.junction_ptr, ids)


# --- turning-fraction estimator -------------------------------------------------

class EstimatorState:
    """Sliding-window mean of realized turning proportions, per link.

    Link order follows ``CompiledNetwork`` (sorted by source road). A window
    slot is filled only on steps where the source in-road had departures.
    """

    def __init__(self, net: CompiledNetwork, window: int = DEFAULT_WINDOW):
        if window < 1:
            raise ValueError("estimator window must be >= 1")
        self.window = window
        self.link_src = net.link_src
        self.link_ptr = net.link_ptr
        n_links = net.link_src.shape[0]
        self.buffer = np.zeros((n_links, window))
        self.filled = np.zeros(net.n_roads, dtype=np.int64)
        self.cursor = np.zeros(net.n_roads, dtype=np.int64)
        out_degree = np.diff(net.link_ptr)
        self.q_bar = 1.0 / (out_degree[net.link_src] + 1.0)
        self.observations = np.zeros(net.n_roads, dtype=np.int64)

    def buffer_length(self, road: int) -> int:
        return int(self.filled[road])


def estimator_update(est: EstimatorState, record) -> EstimatorState:
    """Push the realized proportions of one step into the windows; updates ``est`` in place.

    In-roads without departures this step keep their buffers and estimates.
    """
    departed = record.departures > 0
    est.observations += departed
    links = np.flatnonzero(departed[est.link_src])
    est.filled = np.where(departed, np.minimum(est.filled + 1, est.window), est.filled)
    if links.size:
        src = est.link_src[links]
        est.buffer[links, est.cursor[src]] = record.p_hat[links]
        # empty slots hold zeros, so the row sum is the sum over filled slots
        est.q_bar[links] = est.buffer[links].sum(axis=1) / est.filled[src]
    est.cursor = np.where(departed, (est.cursor + 1) % est.window, est.cursor)
    return est


# --- per-junction (local) computations ---------------------------------------

@dataclass
class JunctionView:
    """Everything a junction may see when deciding."""

    junction_id: str
    members: tuple[str, ...]
    phase_rates: list[dict[str, float]]
    q_hat: dict[str, float]                      # own in-roads
    downstream_q_hat: dict[str, float]           # direct downstream in-roads
    q_bar: dict[tuple[str, str], float] = field(default_factory=dict)  # own out-links
    green_fraction: float = 1.0


def local_view(net: CompiledNetwork, junction_id: str, q_hat, q_bar) -> JunctionView:
    topo = net.topology
    j = topo.junction(junction_id)
    idx = {r: k for k, r in enumerate(net.road_ids)}
    own = {r: float(q_hat[idx[r]]) for r in j.in_roads}
    down, est = {}, {}
    for r in j.in_roads:
        i = idx[r]
        for l in net.out_links(i):
            d = net.road_ids[net.link_dst[l]]
            down[d] = float(q_hat[net.link_dst[l]])
            est[(r, d)] = float(q_bar[l])
    return JunctionView(
        junction_id=junction_id,
        members=j.in_roads,
        phase_rates=[dict(ph.rates) for ph in j.phases],
        q_hat=own,
        downstream_q_hat=down,
        q_bar=est,
        green_fraction=topo.green_fraction,
    )


def compute_weights(view: JunctionView) -> np.ndarray:
    """BackPressure weight per phase: rate-weighted own queue minus estimated downstream queue."""
    pressure = {}
    for r in view.members:
        down = sum(q * view.downstream_q_hat[d] for (src, d), q in view.q_bar.items() if src == r)
        pressure[r] = view.q_hat[r] - down
    return np.array([sum(rate * pressure[r] for r, rate in rates.items()) for rates in view.phase_rates])


def queue_sum_weights(view: JunctionView, floor_negative: bool = False) -> np.ndarray:
    out = []
    for rates in view.phase_rates:
        qs = [view.q_hat[r] for r, v in rates.items() if v > 0]
        out.append(sum(max(q, 0.0) if floor_negative else q for q in qs))
    return np.array(out)


def allocate_cyclic_bp(weights, eta: float, lost_time: float, cycle_length: float) -> np.ndarray:
    if not eta > 0:
        raise ValueError("eta must be positive")
    w = np.asarray(weights, dtype=float)
    total = 1.0 - lost_time / cycle_length
    return kernels.softmax_alloc(np.ascontiguousarray(w), np.array([0, w.shape[0]], dtype=np.int64), float(eta), total)


def softmax_shares(weights, eta: float) -> np.ndarray:
    """Unscaled softmax (sums to one)."""
    return allocate_cyclic_bp(weights, eta, 0.0, 1.0)


def allocate_classic_bp(weights, lost_time: float, cycle_length: float) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    out = np.zeros_like(w)
    out[int(np.argmax(w))] = 1.0 - lost_time / cycle_length  # argmax returns the lowest index on ties
    return out


def allocate_proportional(view: JunctionView, lost_time: float, cycle_length: float) -> np.ndarray:
    w = queue_sum_weights(view, floor_negative=True)
    total = 1.0 - lost_time / cycle_length
    s = w.sum()
    if s > 0:
        return total * w / s
    return np.full(w.shape[0], total / w.shape[0])


def allocate_greedy(view: JunctionView, lost_time: float, cycle_length: float) -> np.ndarray:
    return allocate_classic_bp(queue_sum_weights(view), lost_time, cycle_length)


# --- network-wide controllers --------------------------------------------------

class Controller:
    """Base class: subclasses set ``name``/``per_cycle`` and implement ``decide``."""

    name = "controller"
    per_cycle = True
    uses_estimator = False

    def decide(self, net: CompiledNetwork, q_hat: np.ndarray, q_bar: np.ndarray) -> PolicyDecision:
        raise NotImplementedError

    def decide_local(self, view: JunctionView) -> np.ndarray:
        raise NotImplementedError

    def params(self) -> dict:
        return {}

    def _wrap(self, net, values):
        return PolicyDecision(values, net.junction_ptr, tuple(j.id for j in net.topology.junctions))


class CyclicBackPressure(Controller):
    name = "cyclic_bp"
    per_cycle = True
    uses_estimator = True

    def __init__(self, eta: float = DEFAULT_ETA):
        if not (eta > 0 and math.isfinite(eta)):
            raise ValueError("eta must be a positive finite number")
        self.eta = float(eta)

    def params(self):
        return {"eta": self.eta}

    def decide(self, net, q_hat, q_bar):
        w = kernels.bp_weights(q_hat, net.link_src, net.link_dst, q_bar,
                               net.ent_phase, net.ent_road, net.ent_rate, net.n_phases)
        return self._wrap(net, kernels.softmax_alloc(w, net.junction_ptr, self.eta, net.green_fraction))

    def decide_local(self, view):
        return allocate_cyclic_bp(compute_weights(view), self.eta, 1.0 - view.green_fraction, 1.0)


class ClassicBackPressure(Controller):
    name = "classic_bp"
    per_cycle = False
    uses_estimator = True

    def decide(self, net, q_hat, q_bar):
        w = kernels.bp_weights(q_hat, net.link_src, net.link_dst, q_bar,
                               net.ent_phase, net.ent_road, net.ent_rate, net.n_phases)
        return self._wrap(net, kernels.argmax_alloc(w, net.junction_ptr, net.green_fraction))

    def decide_local(self, view):
        return allocate_classic_bp(compute_weights(view), 1.0 - view.green_fraction, 1.0)


class Proportional(Controller):
    name = "proportional"
    per_cycle = True

    def decide(self, net, q_hat, q_bar):
        w = kernels.queue_sum_weights(q_hat, net.ent_phase, net.ent_road, net.n_phases, True)
        return self._wrap(net, kernels.proportional_alloc(w, net.junction_ptr, net.green_fraction))

    def decide_local(self, view):
        return allocate_proportional(view, 1.0 - view.green_fraction, 1.0)


class Greedy(Controller):
    name = "greedy"
    per_cycle = False

    def decide(self, net, q_hat, q_bar):
        w = kernels.queue_sum_weights(q_hat, net.ent_phase, net.ent_road, net.n_phases, False)
        return self._wrap(net, kernels.argmax_alloc(w, net.junction_ptr, net.green_fraction))

    def decide_local(self, view):
        return allocate_greedy(view, 1.0 - view.green_fraction, 1.0)


POLICIES = {
    "cyclic_bp": CyclicBackPressure,
    "classic_bp": ClassicBackPressure,
    "proportional": Proportional,
    "greedy": Greedy,
}


def make_controller(name: str, eta: float = DEFAULT_ETA) -> Controller:
    try:
        cls = POLICIES[name]
    except KeyError:
        raise ValueError(f"unknown policy {name!r}; choose from {sorted(POLICIES)}") from None
    return cls(eta) if cls is CyclicBackPressure else cls()
