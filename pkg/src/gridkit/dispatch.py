"""Economic dispatch, DC optimal power flow, and wind-aware dispatch."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .costs import CostFunction
from .errors import GridkitError, InfeasibleError
from .netmodel import GridCase, build_dc
from .optim import QpBuilder, bisect, require_optimal, solve_qp

log = logging.getLogger(__name__)

BIND_TOL = 1e-6


@dataclass
class DispatchSolution:
    p: np.ndarray
    objective: float
    lam: float | None = None
    lmps: np.ndarray | None = None
    theta: np.ndarray | None = None
    flows: np.ndarray | None = None
    binding: list = field(default_factory=list)
    check: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {"dispatch": self.p.tolist(), "objective": self.objective, "lambda": self.lam,
               "lmps": None if self.lmps is None else self.lmps.tolist(),
               "binding": self.binding}
        if self.theta is not None:
            out["theta"] = self.theta.tolist()
            out["flows"] = self.flows.tolist()
        if self.check:
            out["check"] = self.check
        return out


@dataclass(frozen=True)
class WindSpec:
    """Wind output: a point forecast and/or a Weibull law (shape, scale)."""

    forecast: float | None = None
    shape: float | None = None
    scale: float | None = None

    def __post_init__(self):
        if (self.shape is None) != (self.scale is None):
            raise GridkitError("Weibull wind needs both shape and scale")
        if self.shape is not None and not (self.shape > 0 and self.scale > 0):
            raise GridkitError("Weibull shape and scale must be positive")

    def quantile(self, prob: float) -> float:
        """Level ``q`` with ``P[W <= q] = prob``."""
        if self.shape is None:
            raise GridkitError("wind spec has no Weibull law")
        if not 0 < prob < 1:
            raise GridkitError("probability must lie in (0, 1)")
        return float(self.scale * (-np.log1p(-prob)) ** (1.0 / self.shape))

    @property
    def median(self) -> float:
        return self.quantile(0.5)


def _check_units(costs, p_min, p_max):
    costs = list(costs)
    p_min = np.asarray(p_min, dtype=float).ravel()
    p_max = np.asarray(p_max, dtype=float).ravel()
    if not (len(costs) == p_min.size == p_max.size):
        raise GridkitError("costs, p_min and p_max must have equal length")
    if np.any(p_min > p_max):
        raise GridkitError("p_min exceeds p_max")
    return costs, p_min, p_max


def _gen_binding(p, p_min, p_max):
    out = []
    for i, (v, lo, hi) in enumerate(zip(p, p_min, p_max)):
        if v <= lo + BIND_TOL:
            out.append({"gen": i, "limit": "min"})
        elif v >= hi - BIND_TOL:
            out.append({"gen": i, "limit": "max"})
    return out


def _lambda_search(costs, p_min, p_max, demand):
    """Price clearing ``sum P_i(lam) = demand`` via bisection on the balance gap."""
    def sets(lam):
        lo = np.empty(len(costs))
        hi = np.empty(len(costs))
        for i, c in enumerate(costs):
            lo[i], hi[i] = c.net_argmin(lam, p_min[i], p_max[i])
        return lo, hi

    def gap(lam):
        lo, hi = sets(lam)
        if lo.sum() > demand:
            return lo.sum() - demand
        if hi.sum() < demand:
            return hi.sum() - demand
        return 0.0

    slopes = []
    for c, a, b in zip(costs, p_min, p_max):
        slopes.extend(c.marginal(a))
        slopes.extend(c.marginal(b))
    span = max(1.0, max(abs(s) for s in slopes))
    lam = bisect(gap, min(slopes) - span, max(slopes) + span, tol=1e-15)
    lo, hi = sets(lam)
    room = hi - lo
    extra = demand - lo.sum()
    p = lo + (room * extra / room.sum() if room.sum() > 0 else 0.0)
    return np.minimum(np.maximum(p, p_min), p_max), float(lam)


def _ed_qp(costs, p_min, p_max, demand, inequality=False):
    qb = QpBuilder()
    x = qb.add_vars(len(costs))
    for i, c in zip(x, costs):
        qb.add_cost(int(i), c)
        qb.add_bounds(int(i), p_min[i], p_max[i])
    terms = {int(i): 1.0 for i in x}
    if inequality:
        row = qb.add_le({i: -1.0 for i in terms}, -demand)
    else:
        row = qb.add_eq(terms, demand)
    prob = qb.build()
    sol = require_optimal(solve_qp(prob, tol=1e-10, max_iter=200), "economic dispatch")
    lam = float(sol.ineq_duals[row]) if inequality else float(sol.eq_duals[row])
    return sol.x[x], lam, sol.objective + qb.constant


def economic_dispatch(costs, p_min, p_max, demand: float, wind: WindSpec | float | None = None,
                      agree_tol: float = 1e-6) -> DispatchSolution:
    """Single-bus dispatch at least cost.

    The solution comes from bisection on the system price; an interior-point
    QP solve of the same problem is run alongside and the largest differences
    in outputs and price are recorded in ``check``.  A wind forecast is treated
    as negative load.
    """
    costs, p_min, p_max = _check_units(costs, p_min, p_max)
    if isinstance(wind, WindSpec):
        wind = wind.forecast
    net = float(demand) - (float(wind) if wind is not None else 0.0)
    tol = 1e-9 * max(1.0, abs(net))
    if net < p_min.sum() - tol or net > p_max.sum() + tol:
        raise InfeasibleError(f"net demand {net:.6g} outside [{p_min.sum():.6g}, {p_max.sum():.6g}]")
    p, lam = _lambda_search(costs, p_min, p_max, net)
    p_qp, lam_qp, _ = _ed_qp(costs, p_min, p_max, net)
    check = {"p_diff": float(np.abs(p - p_qp).max()), "lambda_diff": abs(lam - lam_qp),
             "lambda_qp": lam_qp}
    if check["p_diff"] > agree_tol * max(1.0, np.abs(p).max()):
        log.warning("bisection and QP dispatch differ by %.3e", check["p_diff"])
    obj = float(sum(c(v) for c, v in zip(costs, p)))
    return DispatchSolution(p, obj, lam=lam, binding=_gen_binding(p, p_min, p_max), check=check)


def chance_ed(costs, p_min, p_max, demand: float, wind: WindSpec, eps_prob: float) -> DispatchSolution:
    """Dispatch that covers demand whenever wind reaches its ``1 - eps_prob`` quantile.

    ``P[sum P_G + W >= demand] >= eps_prob`` becomes ``sum P_G >= demand - q``.
    Surplus may be curtailed, so the balance is an inequality; when it is slack
    every unit sits at its own cost minimiser and the price is zero.
    """
    if not 0 < eps_prob < 1:
        raise GridkitError("eps_prob must lie in (0, 1)")
    costs, p_min, p_max = _check_units(costs, p_min, p_max)
    q = wind.quantile(1.0 - eps_prob)
    firm = float(demand) - q
    if firm > p_max.sum() + 1e-9 * max(1.0, abs(firm)):
        raise InfeasibleError(f"firmed demand {firm:.6g} exceeds capacity {p_max.sum():.6g}")
    free = np.array([c.net_argmin(0.0, a, b)[0] for c, a, b in zip(costs, p_min, p_max)])
    if free.sum() >= firm:
        obj = float(sum(c(v) for c, v in zip(costs, free)))
        sol = DispatchSolution(free, obj, lam=0.0, binding=_gen_binding(free, p_min, p_max))
    else:
        sol = economic_dispatch(costs, p_min, p_max, firm)
    sol.check["wind_quantile"] = q
    sol.check["firm_demand"] = firm
    return sol


def case_units(case: GridCase):
    """Costs and limits of the case generators."""
    costs = [g.cost for g in case.generators]
    return costs, np.array([g.p_min for g in case.generators]), np.array([g.p_max for g in case.generators])


def dc_opf(case: GridCase, costs=None, loads=None, line_limits=None,
           angle_penalty: float = 0.0) -> DispatchSolution:
    """DC optimal power flow; bus balance duals are the LMPs.

    ``loads`` is a per-bus active demand vector (defaults to the case loads),
    ``line_limits`` a per-branch flow limit (defaults to ``p_max``; ``inf``
    for none).  ``angle_penalty`` adds ``w * sum_l (theta_m - theta_n)**2``.
    """
    if angle_penalty < 0:
        raise GridkitError("angle penalty weight must be nonnegative")
    dc = build_dc(case)
    if case.n_components() > 1:
        raise GridkitError("DC-OPF needs a connected network")
    c_case, p_min, p_max = case_units(case)
    costs = c_case if costs is None else list(costs)
    if len(costs) != len(case.generators):
        raise GridkitError("one cost function per generator is required")
    pl = case.bus_load()[0] if loads is None else np.asarray(loads, dtype=float)
    if pl.shape != (case.n_bus,):
        raise GridkitError(f"loads must have length {case.n_bus}")
    limits = (np.array([br.p_max for br in case.branches]) if line_limits is None
              else np.asarray(line_limits, dtype=float))
    if limits.shape != (case.n_branch,):
        raise GridkitError(f"line limits must have length {case.n_branch}")

    qb = QpBuilder()
    pg = qb.add_vars(len(costs))
    th = qb.add_vars(case.n_bus)
    for k, c in enumerate(costs):
        qb.add_cost(int(pg[k]), c)
        qb.add_bounds(int(pg[k]), p_min[k], p_max[k])
    gbus = case.gen_bus_idx()
    balance = []
    for m in range(case.n_bus):
        terms = {int(pg[k]): 1.0 for k in np.flatnonzero(gbus == m)}
        for j in np.flatnonzero(dc.Bx[m]):
            terms[int(th[j])] = terms.get(int(th[j]), 0.0) - dc.Bx[m, j]
        balance.append(qb.add_eq(terms, pl[m]))
    qb.add_eq({int(th[dc.ref]): 1.0}, 0.0)
    for l in range(case.n_branch):
        if np.isfinite(limits[l]):
            row = {int(th[j]): dc.d[l] * dc.A[l, j] for j in np.flatnonzero(dc.A[l])}
            qb.add_le(row, limits[l])
            qb.add_le({i: -v for i, v in row.items()}, limits[l])
    if angle_penalty > 0:
        qb.add_form(th, angle_penalty * dc.A.T @ dc.A)
    sol = require_optimal(solve_qp(qb.build(), tol=1e-10, max_iter=200), "DC-OPF")
    p = sol.x[pg]
    theta = sol.x[th]
    flows = dc.flows(theta)
    lmps = sol.eq_duals[balance]
    binding = _gen_binding(p, p_min, p_max)
    for l in range(case.n_branch):
        if np.isfinite(limits[l]) and abs(flows[l]) >= limits[l] - BIND_TOL:
            binding.append({"branch": l, "limit": "flow"})
    obj = float(sum(c(v) for c, v in zip(costs, p)))
    if angle_penalty > 0:
        obj += angle_penalty * float(np.sum((dc.A @ theta) ** 2))
    return DispatchSolution(p, obj, lmps=lmps, theta=theta, flows=flows, binding=binding,
                            check={"balance": float(abs(p.sum() - pl.sum()))})
