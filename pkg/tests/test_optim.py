import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gridkit.costs import CostFunction
from gridkit.errors import GridkitError, InfeasibleError
from gridkit.optim import (QpBuilder, QpProblem, bisect, diminishing_step, is_feasible,
                           require_optimal, solve_qp, subgradient_max)


def test_bound_active():
    # (x - 1)^2 = x^2 - 2x + 1 ; x >= 2
    sol = solve_qp(QpProblem([[2.0]], [-2.0], A_in=[[-1.0]], b_in=[-2.0]))
    assert sol.optimal
    assert np.isclose(sol.x[0], 2.0, atol=1e-8)
    assert np.isclose(sol.ineq_duals[0], 2.0, atol=1e-6)


def test_equality_dual_is_price():
    sol = solve_qp(QpProblem(np.eye(2), np.zeros(2), A_eq=[[1.0, 1.0]], b_eq=[1.0]))
    assert np.allclose(sol.x, [0.5, 0.5], atol=1e-9)
    # objective 1/4 b^2 has derivative 0.5 at b = 1
    assert np.isclose(sol.eq_duals[0], 0.5, atol=1e-8)


def test_infeasible():
    sol = solve_qp(QpProblem(np.eye(1), [0.0], A_in=[[1.0], [-1.0]], b_in=[-1.0, -1.0]))
    assert sol.status == "infeasible"
    with pytest.raises(InfeasibleError):
        require_optimal(sol)


def test_not_psd():
    with pytest.raises(GridkitError, match="semidefinite"):
        solve_qp(QpProblem([[1.0, 0.0], [0.0, -1.0]], np.zeros(2)))


def test_unconstrained():
    Q = np.array([[4.0, 1.0], [1.0, 3.0]])
    c = np.array([1.0, -2.0])
    sol = solve_qp(QpProblem(Q, c))
    assert np.allclose(sol.x, np.linalg.solve(Q, -c))


def _projected_gradient(Q, c, lo, hi, iters=100000):
    L = np.linalg.eigvalsh(Q).max()
    x = np.clip(np.zeros_like(c), lo, hi)
    for _ in range(iters):
        nxt = np.clip(x - (Q @ x + c) / L, lo, hi)
        if np.abs(nxt - x).max() < 1e-13:
            break
        x = nxt
    return x


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_box_qp_matches_projected_gradient(seed):
    rng = np.random.default_rng(seed)
    n = 10
    M = rng.normal(size=(n, n))
    Q = M @ M.T / n + 0.1 * np.eye(n)
    c = rng.normal(size=n) * 3
    lo, hi = -rng.uniform(0, 1, n), rng.uniform(0, 1, n)
    sol = solve_qp(QpProblem(Q, c, A_in=np.vstack([np.eye(n), -np.eye(n)]), b_in=np.concatenate([hi, -lo])))
    assert sol.optimal
    assert np.abs(sol.x - _projected_gradient(Q, c, lo, hi)).max() < 1e-6


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_kkt_and_price_sensitivity(seed):
    rng = np.random.default_rng(seed)
    n, me, mi = 6, 2, 4
    M = rng.normal(size=(n, n))
    Q = M @ M.T + 0.5 * np.eye(n)
    c = rng.normal(size=n)
    A = rng.normal(size=(me, n))
    G = rng.normal(size=(mi, n))
    x0 = rng.normal(size=n)
    b = A @ x0
    h = G @ x0 + rng.uniform(0, 1, mi)
    sol = solve_qp(QpProblem(Q, c, A, b, G, h), tol=1e-10)
    assert sol.optimal
    assert np.abs(A @ sol.x - b).max() < 1e-8
    slack = h - G @ sol.x
    assert slack.min() > -1e-8 and sol.ineq_duals.min() > -1e-8
    assert np.abs(slack * sol.ineq_duals).max() < 1e-6
    d = 1e-6
    for i in range(me):
        bp = b.copy()
        bp[i] += d
        up = solve_qp(QpProblem(Q, c, A, bp, G, h), tol=1e-11)
        assert abs((up.objective - sol.objective) / d - sol.eq_duals[i]) < 1e-3 * max(1, abs(sol.eq_duals[i]))


def test_phase1():
    assert is_feasible(QpProblem(np.eye(2), np.zeros(2), A_in=[[1, 1]], b_in=[1.0]))
    assert not is_feasible(QpProblem(np.eye(2), np.zeros(2), A_eq=[[1, 1], [1, 1]], b_eq=[1.0, 2.0]))


def test_bisect():
    assert np.isclose(bisect(lambda x: x - 4, 0, 10), 4.0, atol=1e-10)
    assert abs(bisect(lambda x: x ** 3, -1, 1)) < 1e-4
    with pytest.raises(GridkitError, match="same sign"):
        bisect(lambda x: x + 5, 0, 1)


def test_subgradient_abs():
    res = subgradient_max(lambda l: (-abs(l[0] - 3), [-np.sign(l[0] - 3)]), [0.0],
                          step=diminishing_step(2.0, 1.0), iters=5000)
    assert abs(res.lam[0] - 3) < 1e-3
    assert all(b >= a for a, b in zip(res.trace, res.trace[1:]))


def test_subgradient_quadratic():
    P = np.array([[2.0, 0.5], [0.5, 1.0]])
    q = np.array([1.0, -1.0])
    res = subgradient_max(lambda l: (-0.5 * l @ P @ l + q @ l, q - P @ l), [0.0, 0.0],
                          step=lambda k, g: 0.4, iters=2000)
    assert np.allclose(res.lam, np.linalg.solve(P, q), atol=1e-8)


def test_builder_piecewise_linear_cost():
    qb = QpBuilder()
    (x,) = qb.add_vars(1)
    qb.add_cost(int(x), CostFunction(breakpoints=((0, 0), (1, 1), (2, 4))))
    qb.add_bounds(int(x), 0, 2)
    qb.add_eq({int(x): 1.0}, 1.5)
    sol = solve_qp(qb.build())
    assert np.isclose(sol.objective + qb.constant, 2.5, atol=1e-7)
    assert np.isclose(sol.eq_duals[0], 3.0, atol=1e-6)


def test_builder_form():
    qb = QpBuilder()
    x = qb.add_vars(2)
    qb.add_form(x, np.ones((2, 2)))
    qb.add_linear(int(x[0]), -2.0)
    prob = qb.build()
    v = np.array([0.3, -0.7])
    assert np.isclose(prob.objective(v), (v.sum()) ** 2 - 2 * v[0])
