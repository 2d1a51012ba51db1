"""Static road-network description: junctions, in-roads, phases and turning.

An in-road is the unit carrying a queue. Each junction owns a disjoint set of
in-roads and a list of phases; a phase is a vector of saturation rates
(vehicles per full cycle) over the junction's in-roads. Links ``(i, i2)`` say
that traffic served at ``i`` may next join ``i2``; the mean turning matrix
gives the proportion on each link, with the remainder of each row leaving the
network.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

RADIUS_TOL = 1e-9
DRAIN_MARGIN = 1e-6
ROW_SUM_TOL = 1e-12


class NetworkError(ValueError):
    """Base class for topology/turning validation failures."""

    code = "NetworkError"


class DanglingReference(NetworkError):
    code = "DanglingReference"


class EmptyPhaseSet(NetworkError):
    code = "EmptyPhaseSet"


class NonDraining(NetworkError):
    code = "NonDraining"


class BadProportion(NetworkError):
    code = "BadProportion"


class BadStructure(NetworkError):
    code = "BadStructure"


class UnknownJunction(KeyError):
    pass


@dataclass(frozen=True)
class InRoad:
    id: str
    junction: str
    capacity: float | None = None  # None = unbounded
    is_ingress: bool = False
    lanes: int = 1


@dataclass(frozen=True)
class Phase:
    # in-road id -> saturation rate (vehicles per full cycle); omitted roads are red
    rates: Mapping[str, float]
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "rates", dict(self.rates))

    def __hash__(self):
        return hash((self.name, tuple(sorted(self.rates.items()))))

    def rate(self, road: str) -> float:
        return float(self.rates.get(road, 0.0))


@dataclass(frozen=True)
class Junction:
    id: str
    in_roads: tuple[str, ...]
    phases: tuple[Phase, ...]

    def __post_init__(self):
        object.__setattr__(self, "in_roads", tuple(self.in_roads))
        object.__setattr__(self, "phases", tuple(self.phases))


@dataclass(frozen=True)
class NetworkTopology:
    junctions: tuple[Junction, ...]
    in_roads: tuple[InRoad, ...]
    links: tuple[tuple[str, str], ...]
    cycle_length: float = 30.0
    lost_time: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "junctions", tuple(self.junctions))
        object.__setattr__(self, "in_roads", tuple(self.in_roads))
        object.__setattr__(self, "links", tuple(tuple(l) for l in self.links))

    @property
    def green_fraction(self) -> float:
        """Allocatable share of each cycle, ``1 - L/T``."""
        return 1.0 - self.lost_time / self.cycle_length

    @property
    def road_ids(self) -> list[str]:
        return [r.id for r in self.in_roads]

    def road_index(self) -> dict[str, int]:
        return {r.id: k for k, r in enumerate(self.in_roads)}

    def road(self, road_id: str) -> InRoad:
        for r in self.in_roads:
            if r.id == road_id:
                return r
        raise KeyError(road_id)

    def junction(self, junction_id: str) -> Junction:
        for j in self.junctions:
            if j.id == junction_id:
                return j
        raise UnknownJunction(junction_id)


@dataclass(frozen=True)
class TurningMatrix:
    p_bar: Mapping[tuple[str, str], float] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "p_bar", {tuple(k): float(v) for k, v in dict(self.p_bar).items()})

    def __hash__(self):
        return hash(tuple(sorted(self.p_bar.items())))

    def get(self, src: str, dst: str) -> float:
        return self.p_bar.get((src, dst), 0.0)

    def dense(self, road_ids: Sequence[str]) -> np.ndarray:
        """Row-major matrix ``M[i, i2] = p_bar[(i, i2)]`` in the given road order."""
        idx = {r: k for k, r in enumerate(road_ids)}
        m = np.zeros((len(road_ids), len(road_ids)))
        for (a, b), v in self.p_bar.items():
            m[idx[a], idx[b]] = v
        return m

    def exit_share(self, road_id: str) -> float:
        return 1.0 - sum(v for (a, _), v in self.p_bar.items() if a == road_id)


@dataclass
class ValidationResult:
    errors: list[NetworkError] = field(default_factory=list)
    spectral_radius: float | None = None

    @property
    def ok(self) -> bool:
        return not self.errors

    def __bool__(self) -> bool:
        return self.ok

    def raise_for_errors(self) -> None:
        if self.errors:
            if len(self.errors) == 1:
                raise self.errors[0]
            first = self.errors[0]
            raise type(first)("; ".join(f"{e.code}: {e}" for e in self.errors))


def spectral_radius(matrix: np.ndarray, tol: float = RADIUS_TOL, max_iter: int = 200) -> float:
    """Spectral radius of a non-negative matrix by power iteration.

    Iterates on ``M + I`` (same Perron vector, radius shifted by one) so that
    periodic matrices such as permutations still converge. Each round squares
    the iteration matrix, so round ``k`` has taken ``2**k`` power steps; stops
    when the estimate changes by less than ``tol`` relative.
    """
    m = np.asarray(matrix, dtype=float)
    n = m.shape[0]
    if n == 0 or not np.any(m):
        return 0.0
    shifted = m + np.eye(n)
    power = shifted / np.abs(shifted).max()
    est = math.inf
    for _ in range(max_iter):
        x = power.sum(axis=1)
        x /= x.sum()
        new_est = (shifted @ x).sum() - 1.0
        if abs(new_est - est) <= tol * max(1.0, abs(new_est)):
            est = new_est
            break
        est = new_est
        power = power @ power
        power /= np.abs(power).max()
    return max(est, 0.0)


def validate_topology(topology: NetworkTopology, turning: TurningMatrix) -> ValidationResult:
    """Check every structural invariant; collect all violations instead of stopping at the first."""
    res = ValidationResult()
    errs = res.errors
    road_ids = [r.id for r in topology.in_roads]
    roads = {r.id: r for r in topology.in_roads}
    if len(roads) != len(road_ids):
        errs.append(BadStructure("duplicate in-road ids"))
    junction_ids = [j.id for j in topology.junctions]
    if len(set(junction_ids)) != len(junction_ids):
        errs.append(BadStructure("duplicate junction ids"))

    if not topology.cycle_length > 0:
        errs.append(BadStructure(f"cycle length must be positive, got {topology.cycle_length}"))
    elif not (0.0 <= topology.lost_time < topology.cycle_length):
        errs.append(BadStructure(f"lost time {topology.lost_time} outside [0, T)"))

    owner: dict[str, str] = {}
    for j in topology.junctions:
        for rid in j.in_roads:
            if rid not in roads:
                errs.append(DanglingReference(f"junction {j.id!r} lists unknown in-road {rid!r}"))
            elif rid in owner:
                errs.append(BadStructure(f"in-road {rid!r} belongs to both {owner[rid]!r} and {j.id!r}"))
            else:
                owner[rid] = j.id
        if not j.phases:
            errs.append(EmptyPhaseSet(f"junction {j.id!r} has no phases"))
        members = set(j.in_roads)
        for k, ph in enumerate(j.phases):
            for rid, rate in ph.rates.items():
                if rid not in members:
                    errs.append(DanglingReference(f"phase {k} of {j.id!r} names in-road {rid!r} outside the junction"))
                if not (math.isfinite(rate) and rate >= 0):
                    errs.append(BadStructure(f"phase {k} of {j.id!r}: bad rate {rate!r} for {rid!r}"))
            if not any(v > 0 for v in ph.rates.values()):
                errs.append(BadStructure(f"phase {k} of {j.id!r} serves no in-road"))
    for r in topology.in_roads:
        if r.id not in owner:
            errs.append(BadStructure(f"in-road {r.id!r} belongs to no junction"))
        elif r.junction != owner[r.id]:
            errs.append(BadStructure(f"in-road {r.id!r} says junction {r.junction!r} but is listed by {owner[r.id]!r}"))
        if r.capacity is not None and not r.capacity > 0:
            errs.append(BadStructure(f"in-road {r.id!r} capacity must be positive or unbounded"))

    link_set = set()
    for a, b in topology.links:
        if a not in roads or b not in roads:
            errs.append(DanglingReference(f"link ({a!r}, {b!r}) references an unknown in-road"))
            continue
        if owner.get(a) is not None and owner.get(a) == owner.get(b):
            errs.append(BadStructure(f"link ({a!r}, {b!r}) stays inside junction {owner[a]!r}"))
        link_set.add((a, b))

    row_sum: dict[str, float] = {}
    for (a, b), v in turning.p_bar.items():
        if (a, b) not in link_set:
            errs.append(DanglingReference(f"turning entry ({a!r}, {b!r}) is not a link"))
            continue
        if not (0.0 <= v <= 1.0):
            errs.append(BadProportion(f"turning ({a!r}, {b!r}) = {v} outside [0, 1]"))
        row_sum[a] = row_sum.get(a, 0.0) + v
    for a, s in row_sum.items():
        if s > 1.0 + ROW_SUM_TOL:
            errs.append(BadProportion(f"turning row of {a!r} sums to {s} > 1"))

    if not any(isinstance(e, (DanglingReference, BadProportion)) for e in errs):
        m = turning.dense(road_ids)
        rad = spectral_radius(m)
        res.spectral_radius = rad
        if rad >= 1.0 - DRAIN_MARGIN:
            errs.append(NonDraining(f"turning matrix spectral radius {rad:.9g} is not below 1"))
    return res


def service_rate(topology: NetworkTopology, junction_id: str, allocation) -> dict[str, float]:
    """Mean vehicles served per cycle at each member in-road: sum over phases of rate * proportion.

    ``allocation`` is either a PolicyDecision or a sequence of proportions in
    phase order for this junction.
    """
    j = topology.junction(junction_id)
    props = allocation.junction(junction_id) if hasattr(allocation, "junction") else allocation
    props = [float(p) for p in props]
    if len(props) != len(j.phases):
        raise ValueError(f"junction {junction_id!r} has {len(j.phases)} phases, got {len(props)} proportions")
    return {rid: sum(ph.rate(rid) * p for ph, p in zip(j.phases, props)) for rid in j.in_roads}


@dataclass(frozen=True, eq=False)
class CompiledNetwork:
    """Flat array form of a validated topology + turning matrix, as consumed by the kernels.

    Phases are numbered globally, contiguously per junction
    (``junction_ptr[j]:junction_ptr[j+1]``). Phase entries list
    ``(phase, road, rate)`` for every strictly positive rate. Links are sorted
    by source road.
    """

    topology: NetworkTopology
    turning: TurningMatrix
    road_ids: tuple[str, ...]
    n_roads: int
    n_phases: int
    junction_ptr: np.ndarray
    road_junction: np.ndarray
    ent_phase: np.ndarray
    ent_road: np.ndarray
    ent_rate: np.ndarray
    link_src: np.ndarray
    link_dst: np.ndarray
    link_ptr: np.ndarray
    p_bar: np.ndarray
    exit_share: np.ndarray
    capacity: np.ndarray  # inf for unbounded
    is_ingress: np.ndarray
    s_max: int

    @property
    def green_fraction(self) -> float:
        return self.topology.green_fraction

    def out_links(self, road: int) -> range:
        return range(int(self.link_ptr[road]), int(self.link_ptr[road + 1]))

    def phase_rate_matrix(self) -> np.ndarray:
        """Dense ``(n_phases, n_roads)`` matrix of saturation rates."""
        m = np.zeros((self.n_phases, self.n_roads))
        m[self.ent_phase, self.ent_road] = self.ent_rate
        return m


def compile_network(topology: NetworkTopology, turning: TurningMatrix, validate: bool = True) -> CompiledNetwork:
    if validate:
        validate_topology(topology, turning).raise_for_errors()
    road_ids = tuple(r.id for r in topology.in_roads)
    idx = {r: k for k, r in enumerate(road_ids)}
    jidx = {j.id: k for k, j in enumerate(topology.junctions)}
    road_junction = np.array([jidx[r.junction] for r in topology.in_roads], dtype=np.int64)

    junction_ptr = [0]
    ent_phase, ent_road, ent_rate = [], [], []
    g = 0
    for j in topology.junctions:
        for ph in j.phases:
            for rid in j.in_roads:
                v = ph.rate(rid)
                if v > 0:
                    ent_phase.append(g)
                    ent_road.append(idx[rid])
                    ent_rate.append(v)
            g += 1
        junction_ptr.append(g)

    links = sorted(
        ((idx[a], idx[b], turning.get(a, b)) for a, b in topology.links),
        key=lambda x: (x[0], x[1]),
    )
    link_src = np.array([l[0] for l in links], dtype=np.int64)
    link_dst = np.array([l[1] for l in links], dtype=np.int64)
    p_bar = np.array([l[2] for l in links], dtype=float)
    link_ptr = np.searchsorted(link_src, np.arange(len(road_ids) + 1)).astype(np.int64)
    row = np.bincount(link_src, weights=p_bar, minlength=len(road_ids)) if len(links) else np.zeros(len(road_ids))
    exit_share = np.clip(1.0 - row, 0.0, 1.0)
    max_rate = max([0.0] + ent_rate)
    return CompiledNetwork(
        topology=topology,
        turning=turning,
        road_ids=road_ids,
        n_roads=len(road_ids),
        n_phases=g,
        junction_ptr=np.array(junction_ptr, dtype=np.int64),
        road_junction=road_junction,
        ent_phase=np.array(ent_phase, dtype=np.int64),
        ent_road=np.array(ent_road, dtype=np.int64),
        ent_rate=np.array(ent_rate, dtype=float),
        link_src=link_src,
        link_dst=link_dst,
        link_ptr=link_ptr,
        p_bar=p_bar,
        exit_share=exit_share,
        capacity=np.array([math.inf if r.capacity is None else float(r.capacity) for r in topology.in_roads]),
        is_ingress=np.array([r.is_ingress for r in topology.in_roads], dtype=bool),
        s_max=int(math.ceil(max_rate)),
    )
