import itertools

import numpy as np
import pytest

from cyclicbp.lp import Infeasible, Unbounded, solve_lp


def vertex_oracle(c, A, b, ub):
    """Best objective over basic solutions of {A x <= b, 0 <= x <= ub}, by enumeration."""
    n = len(c)
    rows = [(A[k], b[k]) for k in range(A.shape[0])]
    rows += [(-np.eye(n)[k], 0.0) for k in range(n)]
    rows += [(np.eye(n)[k], ub[k]) for k in range(n) if np.isfinite(ub[k])]
    best = -np.inf
    for combo in itertools.combinations(range(len(rows)), n):
        M = np.array([rows[k][0] for k in combo])
        if abs(np.linalg.det(M)) < 1e-10:
            continue
        x = np.linalg.solve(M, np.array([rows[k][1] for k in combo]))
        if all(r @ x <= v + 1e-9 for r, v in rows):
            best = max(best, c @ x)
    return best


def test_textbook_example():
    # max 3x + 5y s.t. x <= 4, 2y <= 12, 3x + 2y <= 18 -> 36 at (2, 6)
    res = solve_lp([3, 5], [[1, 0], [0, 2], [3, 2]], [4, 12, 18])
    assert res.objective == pytest.approx(36)
    assert res.x == pytest.approx([2, 6])


def test_equality_and_negative_rhs():
    # min x + y s.t. x + y >= 2 (as -x - y <= -2), x - y == 0
    res = solve_lp([1, 1], [[-1, -1]], [-2], [[1, -1]], [0], maximize=False)
    assert res.objective == pytest.approx(2)
    assert res.x == pytest.approx([1, 1])


def test_bounds_and_flips():
    res = solve_lp([1, 1], [[1, 2]], [10], lb=[-1, 0], ub=[3, np.inf])
    assert res.objective == pytest.approx(3 + 3.5)


def test_infeasible_and_unbounded():
    with pytest.raises(Infeasible):
        solve_lp([1], [[1], [-1]], [1, -2])
    with pytest.raises(Unbounded):
        solve_lp([1, 0], [[-1, 1]], [1])


def test_degenerate_problem_terminates():
    # classic cycling example for Dantzig's rule; Bland's rule must terminate
    c = [10, -57, -9, -24]
    A = [[0.5, -5.5, -2.5, 9], [0.5, -1.5, -0.5, 1], [1, 0, 0, 0]]
    res = solve_lp(c, A, [0, 0, 1])
    assert res.objective == pytest.approx(1.0)


def test_random_against_vertex_enumeration():
    rng = np.random.default_rng(2)
    for _ in range(60):
        n, m = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        A = rng.normal(0, 1, (m, n))
        b = rng.uniform(0, 3, m)
        c = rng.normal(0, 1, n)
        ub = np.where(rng.random(n) < 0.5, rng.uniform(0.5, 4, n), np.inf)
        oracle = vertex_oracle(c, A, b, np.where(np.isfinite(ub), ub, 1e6))
        if oracle > 1e5:  # effectively unbounded
            with pytest.raises(Unbounded):
                solve_lp(c, A, b, ub=ub)
            continue
        res = solve_lp(c, A, b, ub=ub)
        assert res.objective == pytest.approx(oracle, abs=1e-7)
        assert np.all(A @ res.x <= b + 1e-9)
