"""Stability region, its margin, and empirical drift diagnostics.

An arrival-rate vector ``a`` is inside the stability region when some green
shares ``rho`` (per junction summing to at most ``1 - L/T``) and departure
rates ``s`` (at most the green-weighted saturation rates) satisfy
``a_i + eps + sum_k s_k p_ki <= s_i`` with ``eps > 0``. ``max_epsilon`` finds
the largest such ``eps`` by LP; ``brute_force_region`` enumerates green
shares on a grid as an independent check; ``lemma6_bound`` evaluates the
min-max upper bound on any feasible margin.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .lp import solve_lp
from .network import CompiledNetwork, NetworkTopology, TurningMatrix, compile_network

WITNESS_SLACK = 1e-9
REFINE_BATCH = 4096  # grid points refined together below zero


class InfeasibleDemand(ValueError):
    pass


class TooLarge(ValueError):
    pass


class TrajectoryTooShort(ValueError):
    pass


@dataclass
class StabilityReport:
    epsilon_star: float
    feasible: bool
    witness_rho: dict
    witness_s: dict
    lemma6_bound: float | None = None

    def to_json(self) -> dict:
        return {
            "epsilon_star": self.epsilon_star,
            "feasible": self.feasible,
            "in_closure": self.epsilon_star >= -WITNESS_SLACK,
            "witness_rho": self.witness_rho,
            "witness_s": self.witness_s,
            "lemma6_bound": self.lemma6_bound,
        }


def _net(topology, turning) -> CompiledNetwork:
    if isinstance(topology, CompiledNetwork):
        return topology
    return compile_network(topology, turning)


def _rates(net: CompiledNetwork, a) -> np.ndarray:
    if isinstance(a, dict):
        unknown = set(a) - set(net.road_ids)
        if unknown:
            raise KeyError(f"unknown in-roads in arrival rates: {sorted(unknown)}")
        vec = np.array([float(a.get(r, 0.0)) for r in net.road_ids])
    else:
        vec = np.asarray(a, dtype=float)
        if vec.shape != (net.n_roads,):
            raise ValueError(f"expected {net.n_roads} arrival rates, got shape {vec.shape}")
    if np.any(vec < 0) or not np.all(np.isfinite(vec)):
        raise InfeasibleDemand("arrival rates must be finite and non-negative")
    return vec


def _turning_dense(net: CompiledNetwork) -> np.ndarray:
    P = np.zeros((net.n_roads, net.n_roads))
    P[net.link_src, net.link_dst] = net.p_bar
    return P


def _region_constraints(net: CompiledNetwork, demand_coeff: np.ndarray, demand_const: np.ndarray):
    """Rows over variables ``[rho (n_phases), s (n_roads), z]``.

    Flow rows: ``demand_coeff_i * z + sum_k p_ki s_k - s_i <= -demand_const_i``.
    """
    nP, nR = net.n_phases, net.n_roads
    nv = nP + nR + 1
    P = _turning_dense(net)
    R = net.phase_rate_matrix()
    nJ = net.junction_ptr.shape[0] - 1
    A = np.zeros((nR + nJ + nR, nv))
    b = np.zeros(nR + nJ + nR)
    # flow balance
    A[:nR, nP:nP + nR] = P.T - np.eye(nR)
    A[:nR, -1] = demand_coeff
    b[:nR] = -demand_const
    # green budget per junction
    for j in range(nJ):
        A[nR + j, net.junction_ptr[j]:net.junction_ptr[j + 1]] = 1.0
        b[nR + j] = net.green_fraction
    # departures within allocated service
    A[nR + nJ:, nP:nP + nR] = np.eye(nR)
    A[nR + nJ:, :nP] = -R.T
    return A, b


def _witness(net: CompiledNetwork, x: np.ndarray):
    nP = net.n_phases
    rho = {}
    for j, junc in enumerate(net.topology.junctions):
        rho[junc.id] = x[net.junction_ptr[j]:net.junction_ptr[j + 1]].tolist()
    s = {rid: float(v) for rid, v in zip(net.road_ids, x[nP:nP + net.n_roads])}
    return rho, s


def max_epsilon(topology: NetworkTopology | CompiledNetwork, turning: TurningMatrix | None = None, a=None,
                with_bound: bool = True, full_service: bool = False) -> StabilityReport:
    """Largest uniform increment ``eps`` keeping ``a + eps`` inside the closed region.

    ``full_service=True`` pins departures to the allocated service
    (``s = sum rho sigma``) instead of bounding them by it. That stricter
    region is the one the min-max bound actually bounds.
    """
    net = _net(topology, turning)
    rates = _rates(net, a if a is not None else np.zeros(net.n_roads))
    nP, nR = net.n_phases, net.n_roads
    A, b = _region_constraints(net, np.ones(nR), rates)
    A_eq = b_eq = None
    if full_service:
        nJ = net.junction_ptr.shape[0] - 1
        A_eq, b_eq = A[nR + nJ:], b[nR + nJ:]
        A, b = A[:nR + nJ], b[:nR + nJ]
    g = net.green_fraction
    eps_lo = -(float(rates.max(initial=0.0)) + 1.0)
    lb = np.concatenate([np.zeros(nP + nR), [eps_lo]])
    s_cap = np.full(nR, g * max(net.ent_rate.max(initial=0.0), 1.0) * max(1, nP))
    ub = np.concatenate([np.full(nP, g), s_cap, [np.inf]])
    c = np.zeros(nP + nR + 1)
    c[-1] = 1.0
    res = solve_lp(c, A, b, A_eq, b_eq, lb=lb, ub=ub, maximize=True)
    eps = float(res.x[-1])
    rho, s = _witness(net, res.x)
    bound = lemma6_bound(net, None, rates) if with_bound else None
    return StabilityReport(eps, eps > 0, rho, s, bound)


def max_load_factor(topology, turning=None, a=None) -> float:
    """Largest ``lam`` with ``lam * a`` in the closed region (``inf`` if ``a`` is zero)."""
    net = _net(topology, turning)
    rates = _rates(net, a)
    if not rates.any():
        return math.inf
    nP, nR = net.n_phases, net.n_roads
    A, b = _region_constraints(net, rates, np.zeros(nR))
    g = net.green_fraction
    s_cap = np.full(nR, g * max(net.ent_rate.max(initial=0.0), 1.0) * max(1, nP))
    ub = np.concatenate([np.full(nP, g), s_cap, [np.inf]])
    c = np.zeros(nP + nR + 1)
    c[-1] = 1.0
    res = solve_lp(c, A, b, ub=ub, maximize=True)
    return float(res.x[-1])


def witness_violations(topology, turning, a, report: StabilityReport, slack: float = WITNESS_SLACK) -> list[str]:
    """Re-check the witness by direct substitution at ``eps* - slack``; empty list means valid."""
    net = _net(topology, turning)
    rates = _rates(net, a)
    eps = report.epsilon_star - slack
    rho = report.witness_rho
    s = np.array([report.witness_s[r] for r in net.road_ids])
    P = _turning_dense(net)
    out = []
    inflow = P.T @ s
    for i, rid in enumerate(net.road_ids):
        if rates[i] + eps + inflow[i] > s[i] + 1e-12 * max(1.0, s[i]):
            out.append(f"flow balance fails at {rid}")
    rate_of = {}
    for junc in net.topology.junctions:
        shares = rho[junc.id]
        if any(v < -1e-12 for v in shares):
            out.append(f"negative green share at {junc.id}")
        if sum(shares) > net.green_fraction + 1e-12:
            out.append(f"green budget exceeded at {junc.id}")
        for rid in junc.in_roads:
            rate_of[rid] = sum(ph.rate(rid) * v for ph, v in zip(junc.phases, shares))
    for i, rid in enumerate(net.road_ids):
        if s[i] < -1e-12:
            out.append(f"negative departure rate at {rid}")
        if s[i] > rate_of[rid] + 1e-9:
            out.append(f"departures exceed service at {rid}")
    return out


def lemma6_bound(topology, turning=None, a=None, idle_floor: bool = True) -> float:
    """``(1 - L/T) * min_u ( sum_j max_phase w(u) - u . a )`` over the probability simplex.

    With ``idle_floor`` each junction's maximum also ranges over an all-red
    option of weight 0, matching the ``<=`` green budget; without it the
    expression is taken literally.
    """
    net = _net(topology, turning)
    rates = _rates(net, a if a is not None else np.zeros(net.n_roads))
    nR = net.n_roads
    nJ = net.junction_ptr.shape[0] - 1
    P = _turning_dense(net)
    R = net.phase_rate_matrix()
    # w_sigma(u) = sum_i R[sigma, i] (u_i - sum_k P[i, k] u_k) = (R (I - P)) u
    W = R @ (np.eye(nR) - P)
    phase_junction = np.repeat(np.arange(nJ), np.diff(net.junction_ptr))
    # variables [u (nR), m (nJ)]; maximize a.u - sum m
    A = np.zeros((net.n_phases, nR + nJ))
    A[:, :nR] = W
    A[np.arange(net.n_phases), nR + phase_junction] = -1.0
    b = np.zeros(net.n_phases)
    A_eq = np.concatenate([np.ones(nR), np.zeros(nJ)])[None, :]
    m_lo = 0.0 if idle_floor else -(float(np.abs(W).sum()) + 1.0)
    lb = np.concatenate([np.zeros(nR), np.full(nJ, m_lo)])
    ub = np.concatenate([np.ones(nR), np.full(nJ, np.inf)])
    c = np.concatenate([rates, -np.ones(nJ)])
    res = solve_lp(c, A, b, A_eq, [1.0], lb=lb, ub=ub, maximize=True)
    return net.green_fraction * -res.objective


def neumann_inverse(p: np.ndarray, tol: float = 1e-12, max_terms: int = 10_000) -> tuple[np.ndarray, int]:
    """``sum_k p^k`` truncated once the newest term's max-norm drops below ``tol``."""
    n = p.shape[0]
    total = np.eye(n)
    term = np.eye(n)
    for k in range(1, max_terms + 1):
        term = term @ p
        total += term
        if np.abs(term).max(initial=0.0) < tol:
            return total, k
    raise ValueError("Neumann series did not converge")


@dataclass
class BruteForceResult:
    epsilon: float
    rho: dict
    grid_points: int


def _compositions(total: int, parts: int):
    for cut in itertools.combinations(range(total + parts - 1), parts - 1):
        prev = -1
        out = []
        for c in cut:
            out.append(c - prev - 1)
            prev = c
        out.append(total + parts - 2 - prev)
        yield out


def brute_force_region(topology, turning=None, a=None, resolution: float = 0.01,
                       max_points: int = 5_000_000) -> BruteForceResult:
    """Grid search over green shares; an independent approximation of ``max_epsilon``.

    For a green-share vector ``rho`` the smallest admissible departures are
    ``s = N (a + eps)``, ``N = (I - p^T)^-1`` (Neumann series), so ``eps`` is
    limited by ``min_i (c_i - (N a)_i) / (N 1)_i`` where ``c`` is the served
    rate. That closed form is exact for ``eps >= 0``; below zero it can imply
    negative departures, so those points are refined by bisection on the
    least non-negative departures. Shares sum to exactly ``1 - L/T`` per
    junction, which loses nothing.
    """
    net = _net(topology, turning)
    if net.n_phases > 6:
        raise TooLarge(f"grid enumeration needs at most 6 phases, got {net.n_phases}")
    rates = _rates(net, a)
    K = int(round(1.0 / resolution))
    if K < 1:
        raise ValueError("resolution must be at most 1")
    N, _ = neumann_inverse(_turning_dense(net).T)
    Na = N @ rates
    N1 = N @ np.ones(net.n_roads)
    R = net.phase_rate_matrix()
    g = net.green_fraction
    grids = []
    total_points = 1
    for j in range(net.junction_ptr.shape[0] - 1):
        lo, hi = net.junction_ptr[j], net.junction_ptr[j + 1]
        pts = np.array(list(_compositions(K, hi - lo)), dtype=float) * (g / K)
        grids.append(pts)
        total_points *= pts.shape[0]
    if total_points > max_points:
        raise TooLarge(f"grid has {total_points} points")
    P = _turning_dense(net)
    best_eps, best_rho = -math.inf, None
    mesh = np.stack(np.meshgrid(*[np.arange(gr.shape[0]) for gr in grids], indexing="ij"), -1).reshape(-1, len(grids))
    chunk = 200_000
    for start in range(0, mesh.shape[0], chunk):
        sel = mesh[start:start + chunk]
        rho = np.concatenate([grids[j][sel[:, j]] for j in range(len(grids))], axis=1)
        served = rho @ R
        eps = ((served - Na) / N1).min(axis=1)
        k = int(np.argmax(eps))
        if eps[k] >= 0:
            if eps[k] > best_eps:
                best_eps, best_rho = float(eps[k]), rho[k]
            continue
        # below zero the closed form may imply negative departures upstream, so it
        # is only an upper bound; refine candidates best-first and prune the rest
        order = np.argsort(-eps, kind="stable")
        for lo in range(0, order.shape[0], REFINE_BATCH):
            batch = order[lo:lo + REFINE_BATCH]
            batch = batch[eps[batch] > best_eps]
            if batch.size == 0:
                break
            exact = _exact_negative_margins(P, rates, served[batch], eps[batch])
            k = int(np.argmax(exact))
            if exact[k] > best_eps:
                best_eps, best_rho = float(exact[k]), rho[batch[k]]
    rho_out = {}
    for j, junc in enumerate(net.topology.junctions):
        rho_out[junc.id] = best_rho[net.junction_ptr[j]:net.junction_ptr[j + 1]].tolist()
    return BruteForceResult(best_eps, rho_out, total_points)


def _least_departures(P: np.ndarray, a: np.ndarray, eps, tol: float = 1e-13) -> np.ndarray:
    """Smallest ``s >= 0`` with ``s >= a + eps + P^T s``, one row per entry of ``eps``.

    Monotone fixed-point iteration from zero.
    """
    base = a[None, :] + np.asarray(eps, dtype=float)[:, None]
    s = np.zeros_like(base)
    for _ in range(100_000):
        nxt = np.maximum(0.0, base + s @ P)
        if np.abs(nxt - s).max(initial=0.0) <= tol * max(1.0, np.abs(nxt).max(initial=0.0)):
            return nxt
        s = nxt
    return s


def _exact_negative_margins(P, a, served, upper, tol=1e-11) -> np.ndarray:
    """Largest ``eps <= upper`` whose least departures fit under ``served``; bisection per row."""
    fits = lambda e: np.all(_least_departures(P, a, e) <= served + 1e-12, axis=1)
    hi = np.array(upper, dtype=float)
    lo = np.full_like(hi, -float(a.max(initial=0.0)))  # a + eps <= 0 there, so s = 0 is admissible
    done = fits(hi)
    lo[done] = hi[done]
    while np.any(hi - lo > tol):
        mid = 0.5 * (lo + hi)
        ok = fits(mid)
        lo = np.where(ok, mid, lo)
        hi = np.where(ok, hi, mid)
    return lo


def profile_margin(topology, turning, demand) -> float:
    """Margin of a piecewise-constant profile: the smallest per-segment ``eps*``."""
    net = _net(topology, turning)
    seg_rates = demand.segment_rates(net.road_ids)
    return min(max_epsilon(net, None, r, with_bound=False).epsilon_star for r in seg_rates)


# --- empirical drift -----------------------------------------------------------

MIN_DRIFT_CYCLES = 1000


@dataclass
class DriftReport:
    delta_v: np.ndarray           # 0.5 * sum_i (Q_i(t+1)^2 - Q_i(t)^2)
    q_sigma: np.ndarray
    cesaro: np.ndarray            # (1/tau) sum_{t<tau} Q_sigma(t), tau = 1..n
    quartile_edges: np.ndarray
    quartile_mean_drift: np.ndarray
    top_quartile_mean_drift: float
    extra: dict = field(default_factory=dict)

    def cesaro_half_change(self) -> float:
        """Relative change of the running average between the half-way point and the end."""
        n = self.cesaro.shape[0]
        half, full = self.cesaro[n // 2 - 1], self.cesaro[-1]
        if full == 0 and half == 0:
            return 0.0
        return abs(full - half) / max(abs(full), abs(half))

    def growth_rate(self) -> float:
        """``Q_sigma(t) / t`` at the end of the trajectory."""
        n = self.q_sigma.shape[0] - 1
        return float(self.q_sigma[-1] / n)


def drift_diagnostic(trajectory) -> DriftReport:
    """Lyapunov increments binned by total queue, plus the Cesaro average.

    ``trajectory`` is a ``(n + 1, roads)`` array of queues or a ``RunResult``
    (its per-step queues are used).
    """
    q = np.asarray(getattr(trajectory, "q", trajectory), dtype=float)
    if q.ndim != 2 or q.shape[0] - 1 < MIN_DRIFT_CYCLES:
        raise TrajectoryTooShort(f"need at least {MIN_DRIFT_CYCLES} steps")
    sq = (q ** 2).sum(axis=1)
    dv = 0.5 * (sq[1:] - sq[:-1])
    qs = q.sum(axis=1)
    start = qs[:-1]
    cesaro = np.cumsum(start) / np.arange(1, start.shape[0] + 1)
    edges = np.quantile(start, [0.0, 0.25, 0.5, 0.75, 1.0])
    means = []
    for k in range(4):
        lo, hi = edges[k], edges[k + 1]
        mask = (start >= lo) & ((start < hi) if k < 3 else (start <= hi))
        means.append(float(dv[mask].mean()) if mask.any() else 0.0)
    top = start >= edges[3]
    return DriftReport(dv, qs, cesaro, edges, np.array(means), float(dv[top].mean()))
