"""Small dense linear programs: bounded-variable primal simplex with Bland's rule.

Problems here have at most a few hundred variables, so a dense tableau is
fine. Every variable has a finite lower bound and an optional upper bound;
upper bounds are handled by the ratio test (bound flips) instead of extra
rows. Two phases: artificial variables first reach a feasible basis.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PIVOT_TOL = 1e-9
FEAS_TOL = 1e-9
MAX_ITER = 100_000


class LPError(RuntimeError):
    pass


class Unbounded(LPError):
    pass


class Infeasible(LPError):
    pass


@dataclass
class LPResult:
    x: np.ndarray
    objective: float
    iterations: int


def _run(T, rhs, basis, at_upper, ub, cost, allowed, max_iter):
    m, n = T.shape
    it = 0
    while True:
        it += 1
        if it > max_iter:
            raise LPError("simplex iteration limit reached")
        upper_cols = np.flatnonzero(at_upper)
        beta = rhs - T[:, upper_cols] @ ub[upper_cols] if upper_cols.size else rhs.copy()
        d = cost - cost[basis] @ T
        is_basic = np.zeros(n, dtype=bool)
        is_basic[basis] = True
        improving = allowed & ~is_basic & (
            (~at_upper & (d > PIVOT_TOL) & (ub > 0)) | (at_upper & (d < -PIVOT_TOL))
        )
        cand = np.flatnonzero(improving)
        if cand.size == 0:
            return beta, it
        j = int(cand[0])  # Bland: lowest index
        direction = -1.0 if at_upper[j] else 1.0
        alpha = direction * T[:, j]
        best_t = ub[j]
        best_var = j  # j itself means a bound flip
        best_row = -1
        for r in range(m):
            a = alpha[r]
            if a > PIVOT_TOL:
                t = max(beta[r], 0.0) / a
            elif a < -PIVOT_TOL and np.isfinite(ub[basis[r]]):
                t = max(ub[basis[r]] - beta[r], 0.0) / -a
            else:
                continue
            if t < best_t - 1e-12 or (abs(t - best_t) <= 1e-12 and basis[r] < best_var):
                best_t, best_var, best_row = t, basis[r], r
        if not np.isfinite(best_t):
            raise Unbounded("objective is unbounded")
        if best_row < 0:
            at_upper[j] = not at_upper[j]
            continue
        r = best_row
        leaving = basis[r]
        at_upper[leaving] = alpha[r] < 0
        piv = T[r, j]
        T[r] /= piv
        rhs[r] /= piv
        col = T[:, j].copy()
        col[r] = 0.0
        T -= np.outer(col, T[r])
        rhs -= col * rhs[r]
        basis[r] = j
        at_upper[j] = False


def solve_lp(c, A_ub=None, b_ub=None, A_eq=None, b_eq=None, lb=None, ub=None,
             maximize: bool = True, max_iter: int = MAX_ITER) -> LPResult:
    """Optimize ``c @ x`` subject to ``A_ub x <= b_ub``, ``A_eq x == b_eq``, ``lb <= x <= ub``.

    ``lb`` defaults to zero and must be finite; ``ub`` entries may be ``inf``.
    Raises ``Infeasible`` or ``Unbounded``.
    """
    c = np.asarray(c, dtype=float)
    n = c.shape[0]
    A_ub = np.zeros((0, n)) if A_ub is None else np.asarray(A_ub, dtype=float).reshape(-1, n)
    b_ub = np.zeros(0) if b_ub is None else np.asarray(b_ub, dtype=float)
    A_eq = np.zeros((0, n)) if A_eq is None else np.asarray(A_eq, dtype=float).reshape(-1, n)
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=float)
    lb = np.zeros(n) if lb is None else np.asarray(lb, dtype=float)
    ub = np.full(n, np.inf) if ub is None else np.asarray(ub, dtype=float)
    if not np.all(np.isfinite(lb)):
        raise ValueError("lower bounds must be finite")
    if np.any(ub < lb - FEAS_TOL):
        raise Infeasible("a variable has upper bound below its lower bound")

    # shift to y = x - lb >= 0
    b_ub = b_ub - A_ub @ lb
    b_eq = b_eq - A_eq @ lb
    width = ub - lb

    rows = []  # (coeffs, rhs, kind) with rhs >= 0; kind in {"le", "ge", "eq"}
    for a, b in zip(A_ub, b_ub):
        rows.append((a, b, "le") if b >= 0 else (-a, -b, "ge"))
    for a, b in zip(A_eq, b_eq):
        rows.append((a, b, "eq") if b >= 0 else (-a, -b, "eq"))
    m = len(rows)
    n_slack = sum(1 for r in rows if r[2] != "eq")
    n_art = sum(1 for r in rows if r[2] != "le")
    N = n + n_slack + n_art
    T = np.zeros((m, N))
    rhs = np.zeros(m)
    basis = np.zeros(m, dtype=np.int64)
    art_cols = []
    s_col, a_col = n, n + n_slack
    for r, (a, b, kind) in enumerate(rows):
        T[r, :n] = a
        rhs[r] = b
        if kind == "le":
            T[r, s_col] = 1.0
            basis[r] = s_col
            s_col += 1
        else:
            if kind == "ge":
                T[r, s_col] = -1.0
                s_col += 1
            T[r, a_col] = 1.0
            basis[r] = a_col
            art_cols.append(a_col)
            a_col += 1
    bounds = np.concatenate([width, np.full(n_slack + n_art, np.inf)])
    at_upper = np.zeros(N, dtype=bool)
    allowed = np.ones(N, dtype=bool)
    iters = 0

    if art_cols:
        cost1 = np.zeros(N)
        cost1[art_cols] = -1.0
        beta, k = _run(T, rhs, basis, at_upper, bounds, cost1, allowed, max_iter)
        iters += k
        if -(cost1[basis] @ beta) > FEAS_TOL * max(1.0, np.abs(rhs).max(initial=0.0)):
            raise Infeasible("constraints admit no solution")
        bounds[art_cols] = 0.0
        allowed[art_cols] = False

    sign = 1.0 if maximize else -1.0
    cost = np.zeros(N)
    cost[:n] = sign * c
    beta, k = _run(T, rhs, basis, at_upper, bounds, cost, allowed, max_iter)
    iters += k
    y = np.where(at_upper, bounds, 0.0)
    y[basis] = beta
    x = lb + y[:n]
    return LPResult(x=x, objective=float(c @ x), iterations=iters)
