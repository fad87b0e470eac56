"""Small dense convex solvers: an interior-point QP, bisection, subgradient ascent."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg

from .errors import DimensionError, GridkitError, InfeasibleError

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class QpProblem:
    """minimise 1/2 x'Qx + c'x  s.t.  A_eq x = b_eq,  A_in x <= b_in."""

    Q: np.ndarray
    c: np.ndarray
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    A_in: np.ndarray | None = None
    b_in: np.ndarray | None = None

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float).ravel()
        n = c.size
        Q = np.asarray(self.Q, dtype=float)
        if Q.shape != (n, n):
            raise DimensionError(f"Q must be {n}x{n}, got {Q.shape}")
        if not np.allclose(Q, Q.T, atol=1e-10 * max(1.0, np.abs(Q).max())):
            raise GridkitError("Q is not symmetric")
        A_eq, b_eq = _pair(self.A_eq, self.b_eq, n, "equality")
        A_in, b_in = _pair(self.A_in, self.b_in, n, "inequality")
        for name, val in (("Q", 0.5 * (Q + Q.T)), ("c", c), ("A_eq", A_eq), ("b_eq", b_eq),
                          ("A_in", A_in), ("b_in", b_in)):
            object.__setattr__(self, name, val)

    @property
    def n(self) -> int:
        return self.c.size

    def objective(self, x) -> float:
        return float(0.5 * x @ self.Q @ x + self.c @ x)


def _pair(A, b, n, what):
    if A is None or (np.size(A) == 0 and (b is None or np.size(b) == 0)):
        return np.zeros((0, n)), np.zeros(0)
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float).ravel()
    if A.shape != (b.size, n):
        raise DimensionError(f"{what} constraints: A is {A.shape}, b has {b.size} entries, n={n}")
    return A, b


def check_psd(Q: np.ndarray, eps: float = 1e-9) -> None:
    """Raise unless ``Q + eps*I`` admits a Cholesky factorisation."""
    n = Q.shape[0]
    if n == 0:
        return
    scale = max(1.0, np.abs(Q).max())
    try:
        np.linalg.cholesky(Q + eps * scale * np.eye(n))
    except np.linalg.LinAlgError:
        raise GridkitError("Q is not positive semidefinite") from None


@dataclass
class QpSolution:
    x: np.ndarray
    eq_duals: np.ndarray      # prices: d(objective)/d(b_eq)
    ineq_duals: np.ndarray    # >= 0
    objective: float
    status: str               # "optimal" | "infeasible" | "max_iter"
    iterations: int
    residuals: dict = field(default_factory=dict)

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


def _kkt_solve(K, rhs):
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
            lu = scipy.linalg.lu_factor(K, check_finite=False)
        sol = scipy.linalg.lu_solve(lu, rhs, check_finite=False)
        if np.all(np.isfinite(sol)):
            return sol
    except (ValueError, scipy.linalg.LinAlgError):
        pass
    return np.linalg.lstsq(K, rhs, rcond=None)[0]


def solve_qp(p: QpProblem, tol: float = 1e-9, max_iter: int = 100,
             classify: bool = True) -> QpSolution:
    """Mehrotra predictor-corrector primal-dual interior point method.

    Works on the slack form ``A_in x + s = b_in, s >= 0``.  When the iteration
    fails to converge and ``classify`` is set, a phase-1 problem decides
    whether the constraints are infeasible.
    """
    check_psd(p.Q)
    n, me, mi = p.n, p.b_eq.size, p.b_in.size
    Q, c, A, b, G, h = p.Q, p.c, p.A_eq, p.b_eq, p.A_in, p.b_in
    reg = 1e-10 * max(1.0, np.abs(Q).max() if n else 1.0)

    # starting point: least-squares fit of the equality-constrained problem with W = I
    K0 = np.block([[Q + G.T @ G + reg * np.eye(n), A.T], [A, -reg * np.eye(me)]])
    sol0 = _kkt_solve(K0, np.concatenate([-c + G.T @ h, b]))
    x = sol0[:n]
    y = np.zeros(me)
    s = h - G @ x
    z = np.ones(mi)
    if mi:
        shift = max(0.0, -s.min()) + 1.0
        s = s + shift

    scale_d = 1.0 + max(np.abs(c).max(initial=0.0), np.abs(Q).max(initial=0.0))
    scale_p = 1.0 + np.abs(b).max(initial=0.0)
    scale_i = 1.0 + np.abs(h).max(initial=0.0)

    status = "max_iter"
    it = 0
    res = {}
    best = (x, y, z)
    with np.errstate(all="ignore"):
        for it in range(1, max_iter + 1):
            rd = Q @ x + c + A.T @ y + G.T @ z
            rp = A @ x - b
            ri = G @ x + s - h
            mu = float(s @ z) / mi if mi else 0.0
            res = {"stationarity": float(np.abs(rd).max(initial=0.0)),
                   "primal_eq": float(np.abs(rp).max(initial=0.0)),
                   "primal_in": float(np.abs(ri).max(initial=0.0)),
                   "complementarity": float(np.abs(s * z).max(initial=0.0))}
            if (res["stationarity"] <= tol * scale_d and res["primal_eq"] <= tol * scale_p
                    and res["primal_in"] <= tol * scale_i and res["complementarity"] <= tol):
                status = "optimal"
                break
            if not (np.all(np.isfinite(x)) and np.all(np.isfinite(z))):
                break

            w = z / s if mi else np.zeros(0)
            H = Q + (G.T * w) @ G + reg * np.eye(n)
            K = np.block([[H, A.T], [A, -reg * np.eye(me)]])
            if not np.all(np.isfinite(K)):
                break
            lu = None
            try:
                with warnings.catch_warnings():
                    # exact zero pivots are handled by the least-squares fallback below
                    warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
                    lu = scipy.linalg.lu_factor(K, check_finite=False)
            except (ValueError, scipy.linalg.LinAlgError):
                pass

            def newton(r_sz):
                # ds = -ri - G dx ; dz = (-r_sz + z*ri + z*G dx)/s
                rhs1 = -rd - G.T @ ((-r_sz + z * ri) / s) if mi else -rd
                rhs = np.concatenate([rhs1, -rp])
                if not np.all(np.isfinite(rhs)):
                    raise ValueError("non-finite Newton right-hand side")
                if lu is not None:
                    d = scipy.linalg.lu_solve(lu, rhs, check_finite=False)
                    if not np.all(np.isfinite(d)):
                        d = np.linalg.lstsq(K, rhs, rcond=None)[0]
                else:
                    d = np.linalg.lstsq(K, rhs, rcond=None)[0]
                dx, dy = d[:n], d[n:]
                if mi:
                    ds = -ri - G @ dx
                    dz = (-r_sz - z * ds) / s
                else:
                    ds = dz = np.zeros(0)
                return dx, dy, ds, dz

            def max_step(v, dv):
                neg = dv < 0
                if not np.any(neg):
                    return 1.0
                return min(1.0, float(np.min(-v[neg] / dv[neg])))

            try:
                # predictor
                dx, dy, ds, dz = newton(s * z)
                if mi:
                    a_aff = min(max_step(s, ds), max_step(z, dz))
                    mu_aff = float((s + a_aff * ds) @ (z + a_aff * dz)) / mi
                    sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
                    # corrector with centring
                    dx, dy, ds, dz = newton(s * z + ds * dz - sigma * mu)
            except (np.linalg.LinAlgError, ValueError):
                break
            if not all(np.all(np.isfinite(v)) for v in (dx, dy, ds, dz)):
                break
            if mi:
                alpha = 0.99 * min(max_step(s, ds), max_step(z, dz))
                alpha = min(alpha, 1.0)
            else:
                alpha = 1.0
            x = x + alpha * dx
            y = y + alpha * dy
            if mi:
                s = s + alpha * ds
                z = z + alpha * dz
                s = np.maximum(s, 1e-300)
                z = np.maximum(z, 1e-300)
            if np.abs(x).max(initial=0.0) > 1e12 * (scale_p + scale_i + scale_d):
                break  # diverging: typical of an infeasible problem
            best = (x, y, z)
    x, y, z = best

    if status != "optimal" and classify and not is_feasible(p):
        status = "infeasible"
    return QpSolution(x, -y, z, p.objective(x), status, it, res)


def is_feasible(p: QpProblem, tol: float = 1e-7) -> bool:
    """Phase-1 test: minimise the largest constraint violation ``t``."""
    n, me, mi = p.n, p.b_eq.size, p.b_in.size
    if me + mi == 0:
        return True
    # variables (x, t): |A x - b| <= t, G x - h <= t, t >= 0; tiny ridge keeps x bounded
    G1 = np.vstack([
        np.hstack([p.A_eq, -np.ones((me, 1))]),
        np.hstack([-p.A_eq, -np.ones((me, 1))]),
        np.hstack([p.A_in, -np.ones((mi, 1))]),
        np.hstack([np.zeros((1, n)), -np.ones((1, 1))]),
    ])
    h1 = np.concatenate([p.b_eq, -p.b_eq, p.b_in, [0.0]])
    Q1 = np.zeros((n + 1, n + 1))
    Q1[:n, :n] = 1e-8 * np.eye(n)
    c1 = np.zeros(n + 1)
    c1[-1] = 1.0
    sol = solve_qp(QpProblem(Q1, c1, A_in=G1, b_in=h1), tol=1e-10, max_iter=200, classify=False)
    scale = 1.0 + max(np.abs(p.b_eq).max(initial=0.0), np.abs(p.b_in).max(initial=0.0))
    return bool(sol.x[-1] <= tol * scale)


def require_optimal(sol: QpSolution, what: str = "problem") -> QpSolution:
    if sol.status == "infeasible":
        raise InfeasibleError(f"{what} is infeasible")
    if sol.status != "optimal":
        raise GridkitError(f"{what}: QP solver stopped with status {sol.status}")
    return sol


def bisect(f: Callable[[float], float], lo: float, hi: float, tol: float = 1e-12,
           max_iter: int = 200) -> float:
    """Root of a monotone scalar function bracketed by ``[lo, hi]``."""
    flo, fhi = f(lo), f(hi)
    if flo == 0:
        return lo
    if fhi == 0:
        return hi
    if np.sign(flo) == np.sign(fhi):
        raise GridkitError(f"bisection endpoints have the same sign: f({lo})={flo}, f({hi})={fhi}")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if fm == 0:
            return mid
        if np.sign(fm) == np.sign(flo):
            lo, flo = mid, fm
        else:
            hi = mid
        if hi - lo <= tol * max(1.0, abs(lo), abs(hi)):
            break
    return 0.5 * (lo + hi)


def diminishing_step(a: float = 1.0, b: float = 1.0) -> Callable[[int, np.ndarray], float]:
    """Step rule ``a / (b + k)``."""
    return lambda k, g: a / (b + k)


@dataclass
class SubgradientResult:
    lam: np.ndarray
    value: float
    trace: list          # best value after each iteration
    iterates: list       # (lam, value) per iteration


def subgradient_max(oracle: Callable, lam0, step: Callable | None = None, iters: int = 500,
                    project: Callable | None = None, target: float | None = None) -> SubgradientResult:
    """Maximise a concave function given ``oracle(lam) -> (value, subgradient)``.

    Keeps the best iterate; ``trace`` is nondecreasing by construction.  With
    ``target`` (an upper bound on the maximum, e.g. a primal cost) the Polyak
    step ``(target - value) / |g|**2`` replaces ``step``.
    """
    step = step or diminishing_step()
    lam = np.array(lam0, dtype=float)
    best_lam, best_val = lam.copy(), -np.inf
    trace, iterates = [], []
    for k in range(iters):
        val, g = oracle(lam)
        g = np.asarray(g, dtype=float)
        iterates.append((lam.copy(), float(val)))
        if val > best_val:
            best_val, best_lam = float(val), lam.copy()
        trace.append(best_val)
        if not np.any(g):
            break
        if target is not None:
            if val >= target:
                break
            lam = lam + (target - val) / float(g @ g) * g
        else:
            lam = lam + step(k, g) * g
        if project is not None:
            lam = project(lam)
    return SubgradientResult(best_lam, best_val, trace, iterates)


class QpBuilder:
    """Incremental assembly of a dense :class:`QpProblem`.

    Variables are allocated in blocks; convex cost functions are attached to
    single variables (piecewise-linear ones through an epigraph variable).
    """

    def __init__(self):
        self.n = 0
        self._q: list[tuple[int, int, float]] = []
        self._c: dict[int, float] = {}
        self._eq: list[tuple[dict, float]] = []
        self._in: list[tuple[dict, float]] = []
        self.constant = 0.0

    def add_vars(self, k: int) -> np.ndarray:
        idx = np.arange(self.n, self.n + k)
        self.n += k
        return idx

    def add_linear(self, i: int, coef: float) -> None:
        self._c[i] = self._c.get(i, 0.0) + coef

    def add_quadratic(self, i: int, j: int, coef: float) -> None:
        """Adds ``coef * x_i * x_j`` to the objective."""
        if i == j:
            self._q.append((i, i, 2.0 * coef))
        else:
            self._q.append((i, j, coef))
            self._q.append((j, i, coef))

    def add_form(self, idx, K) -> None:
        """Adds ``x[idx]' K x[idx]`` (``K`` symmetric) to the objective."""
        idx = np.asarray(idx, dtype=int)
        K = np.asarray(K, dtype=float)
        for a, i in enumerate(idx):
            for b, j in enumerate(idx):
                if K[a, b]:
                    self._q.append((int(i), int(j), 2.0 * K[a, b]))

    def add_eq(self, terms: dict, rhs: float) -> int:
        self._eq.append((dict(terms), float(rhs)))
        return len(self._eq) - 1

    def add_le(self, terms: dict, rhs: float) -> int:
        self._in.append((dict(terms), float(rhs)))
        return len(self._in) - 1

    def add_bounds(self, i: int, lo: float, hi: float) -> tuple[int | None, int | None]:
        rows = [None, None]
        if np.isfinite(lo):
            rows[0] = self.add_le({i: -1.0}, -lo)
        if np.isfinite(hi):
            rows[1] = self.add_le({i: 1.0}, hi)
        return tuple(rows)

    def add_cost(self, i: int, cost, weight: float = 1.0) -> None:
        """Attach ``weight * cost(x_i)`` (constant term included)."""
        if cost.is_quadratic:
            if cost.c2:
                self.add_quadratic(i, i, weight * cost.c2)
            self.add_linear(i, weight * cost.c1)
            self.constant += weight * cost.c0
            return
        (e,) = self.add_vars(1)
        self.add_linear(e, weight)
        for _, _, slope, intercept in cost.segments:
            self.add_le({i: slope, e: -1.0}, -intercept)

    def build(self) -> QpProblem:
        n = self.n
        Q = np.zeros((n, n))
        for i, j, v in self._q:
            Q[i, j] += v
        c = np.zeros(n)
        for i, v in self._c.items():
            c[i] += v
        return QpProblem(Q, c, *self._rows(self._eq, n), *self._rows(self._in, n))

    @staticmethod
    def _rows(rows, n):
        A = np.zeros((len(rows), n))
        b = np.zeros(len(rows))
        for r, (terms, rhs) in enumerate(rows):
            for i, v in terms.items():
                A[r, i] += v
            b[r] = rhs
        return A, b
