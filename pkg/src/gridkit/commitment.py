"""Single-bus unit commitment: Lagrangian relaxation with per-unit DP, and brute force.

Conventions
-----------
* ``C(P)`` (constant term included) is paid in every on period; a constant
  startup cost is paid on every off -> on transition, including one at the
  first period when the unit starts off.
* Before the horizon each unit is taken to have been in its initial state long
  enough to satisfy its minimum up/down time.
* Ramp limits bind between consecutive on periods (and against ``init_p`` for
  a unit that starts on); start-up and shut-down moves are not ramp limited.
"""
from __future__ import annotations

import itertools
import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .costs import CostFunction
from .errors import GridkitError, InfeasibleError
from .optim import QpBuilder, solve_qp, subgradient_max

log = logging.getLogger(__name__)

BRUTE_LIMIT = 16


@dataclass(frozen=True)
class UcUnit:
    cost: CostFunction
    p_min: float
    p_max: float
    startup: float = 0.0
    ramp_up: float = np.inf
    ramp_down: float = np.inf
    min_up: int = 1
    min_down: int = 1
    init_on: bool = False
    init_p: float = 0.0
    must_run: bool = False

    def __post_init__(self):
        if self.p_min > self.p_max or self.p_min < 0:
            raise GridkitError("unit limits need 0 <= p_min <= p_max")
        if self.min_up < 1 or self.min_down < 1:
            raise GridkitError("minimum up/down times must be at least 1")
        if self.ramp_up <= 0 or self.ramp_down <= 0:
            raise GridkitError("ramp limits must be positive")
        if self.startup < 0:
            raise GridkitError("startup cost must be nonnegative")
        if self.init_on and not self.p_min <= self.init_p <= self.p_max:
            raise GridkitError("init_p must lie within the limits of a unit that starts on")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["cost"] = self.cost.to_dict()
        for k in ("ramp_up", "ramp_down"):
            if not np.isfinite(d[k]):
                d[k] = None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "UcUnit":
        d = dict(d)
        d["cost"] = CostFunction.from_dict(d.get("cost", {}))
        for k in ("ramp_up", "ramp_down"):
            if d.get(k) is None:
                d[k] = np.inf
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise GridkitError(f"unknown unit key(s) {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True, eq=False)
class UcInstance:
    units: tuple[UcUnit, ...]
    demand: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.demand, dtype=float).ravel()
        object.__setattr__(self, "demand", d)
        object.__setattr__(self, "units", tuple(self.units))
        if d.size < 1:
            raise GridkitError("horizon must have at least one period")
        if not self.units:
            raise GridkitError("instance has no units")
        cap = sum(u.p_max for u in self.units)
        short = [t for t in range(d.size) if d[t] > cap + 1e-9]
        if short:
            raise InfeasibleError(f"demand exceeds total capacity in periods {short}")

    @property
    def T(self) -> int:
        return self.demand.size

    @property
    def n_units(self) -> int:
        return len(self.units)

    def to_dict(self) -> dict:
        return {"version": 1, "demand": self.demand.tolist(), "units": [u.to_dict() for u in self.units]}

    @classmethod
    def from_dict(cls, d: dict) -> "UcInstance":
        return cls(tuple(UcUnit.from_dict(u) for u in d["units"]), np.asarray(d["demand"], dtype=float))

    @classmethod
    def loads(cls, text: str) -> "UcInstance":
        try:
            return cls.from_dict(json.loads(text))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise GridkitError(f"bad UC instance: {exc}") from None


@dataclass
class UcSchedule:
    u: np.ndarray                 # n_units x T, 0/1
    p: np.ndarray                 # n_units x T
    cost: float
    dual_bound: float | None = None
    gap: float | None = None
    lam: np.ndarray | None = None
    info: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"u": self.u.tolist(), "p": self.p.tolist(), "primal": self.cost,
                "dual": self.dual_bound, "gap": self.gap,
                "lambda": None if self.lam is None else self.lam.tolist(), "info": self.info}

    def to_csv(self) -> str:
        n, T = self.u.shape
        head = "period," + ",".join(f"u{m},p{m}" for m in range(n))
        rows = [head]
        for t in range(T):
            rows.append(f"{t}," + ",".join(f"{int(self.u[m, t])},{self.p[m, t]:.10g}" for m in range(n)))
        return "\n".join(rows) + "\n"


# --------------------------------------------------------------------------- feasibility


def commitment_violations(inst: UcInstance, u) -> list[str]:
    """Min up/down and must-run violations of a 0/1 matrix."""
    u = np.asarray(u, dtype=int)
    out = []
    for m, unit in enumerate(inst.units):
        if unit.must_run and not u[m].all():
            out.append(f"unit {m}: must run")
        state = 1 if unit.init_on else 0
        run = np.inf  # initial run counts as saturated
        for t in range(inst.T):
            if u[m, t] == state:
                run += 1
                continue
            need = unit.min_up if state == 1 else unit.min_down
            if run < need:
                out.append(f"unit {m}: {'up' if state else 'down'} time {run} < {need} before period {t}")
            state = int(u[m, t])
            run = 1
    return out


def schedule_violations(inst: UcInstance, u, p, tol: float = 1e-6) -> list[str]:
    """Every constraint of the single-bus problem checked on ``(u, p)``."""
    u = np.asarray(u, dtype=int)
    p = np.asarray(p, dtype=float)
    out = commitment_violations(inst, u)
    for m, unit in enumerate(inst.units):
        for t in range(inst.T):
            if u[m, t]:
                if not unit.p_min - tol <= p[m, t] <= unit.p_max + tol:
                    out.append(f"unit {m} period {t}: output {p[m, t]} outside limits")
            elif abs(p[m, t]) > tol:
                out.append(f"unit {m} period {t}: output while off")
            on_before = u[m, t - 1] if t else unit.init_on
            if u[m, t] and on_before:
                before = p[m, t - 1] if t else unit.init_p
                if p[m, t] - before > unit.ramp_up + tol or before - p[m, t] > unit.ramp_down + tol:
                    out.append(f"unit {m} period {t}: ramp limit")
    gap = np.abs(p.sum(axis=0) - inst.demand)
    for t in np.flatnonzero(gap > tol * max(1.0, np.abs(inst.demand).max())):
        out.append(f"period {t}: balance off by {gap[t]:.3e}")
    return out


def schedule_cost(inst: UcInstance, u, p) -> float:
    u = np.asarray(u, dtype=int)
    total = 0.0
    for m, unit in enumerate(inst.units):
        prev = int(unit.init_on)
        for t in range(inst.T):
            if u[m, t]:
                total += float(unit.cost(p[m, t]))
                if not prev:
                    total += unit.startup
            prev = u[m, t]
    return total


def dispatch_commitment(inst: UcInstance, u):
    """Least-cost outputs for a fixed commitment (multi-period ED with ramps).

    Returns ``(p, cost)`` or ``None`` when the commitment admits no feasible
    dispatch.
    """
    u = np.asarray(u, dtype=int)
    if commitment_violations(inst, u):
        return None
    d = inst.demand
    pmin = np.array([x.p_min for x in inst.units])
    pmax = np.array([x.p_max for x in inst.units])
    tol = 1e-9 * max(1.0, np.abs(d).max())
    if np.any(pmin @ u > d + tol) or np.any(pmax @ u < d - tol):
        return None
    qb = QpBuilder()
    var = -np.ones(u.shape, dtype=int)
    for m, unit in enumerate(inst.units):
        for t in range(inst.T):
            if u[m, t]:
                (i,) = qb.add_vars(1)
                var[m, t] = i
                qb.add_cost(int(i), unit.cost)
                qb.add_bounds(int(i), unit.p_min, unit.p_max)
    for t in range(inst.T):
        on = [int(var[m, t]) for m in range(inst.n_units) if u[m, t]]
        if on:
            qb.add_eq({i: 1.0 for i in on}, d[t])
        elif abs(d[t]) > tol:
            return None
    for m, unit in enumerate(inst.units):
        for t in range(inst.T):
            if not u[m, t]:
                continue
            if t == 0 and unit.init_on:
                if np.isfinite(unit.ramp_up):
                    qb.add_le({int(var[m, 0]): 1.0}, unit.init_p + unit.ramp_up)
                if np.isfinite(unit.ramp_down):
                    qb.add_le({int(var[m, 0]): -1.0}, unit.ramp_down - unit.init_p)
            elif t > 0 and u[m, t - 1]:
                a, b = int(var[m, t - 1]), int(var[m, t])
                if np.isfinite(unit.ramp_up):
                    qb.add_le({b: 1.0, a: -1.0}, unit.ramp_up)
                if np.isfinite(unit.ramp_down):
                    qb.add_le({a: 1.0, b: -1.0}, unit.ramp_down)
    p = np.zeros(u.shape)
    if qb.n:
        sol = solve_qp(qb.build(), tol=1e-10, max_iter=200)
        if not sol.optimal:
            return None
        mask = var >= 0
        p[mask] = sol.x[var[mask]]
        # snap onto the limits to remove interior-point round-off
        p[mask] = np.clip(p[mask], np.broadcast_to(pmin[:, None], u.shape)[mask],
                          np.broadcast_to(pmax[:, None], u.shape)[mask])
    return p, schedule_cost(inst, u, p)


# --------------------------------------------------------------------------- brute force


def uc_bruteforce(inst: UcInstance) -> UcSchedule:
    """Exact optimum by enumerating every commitment matrix (``N*T <= 16``)."""
    n, T = inst.n_units, inst.T
    if n * T > BRUTE_LIMIT:
        raise GridkitError(f"brute force limited to N*T <= {BRUTE_LIMIT}, got {n * T}")
    best = None
    feasible = 0
    for bits in itertools.product((0, 1), repeat=n * T):
        u = np.array(bits, dtype=int).reshape(n, T)
        res = dispatch_commitment(inst, u)
        if res is None:
            continue
        feasible += 1
        if best is None or res[1] < best[2] - 1e-12:
            best = (u, res[0], res[1])
    if best is None:
        raise InfeasibleError("no feasible commitment exists")
    return UcSchedule(best[0], best[1], best[2], best[2], 0.0, info={"feasible_commitments": feasible})


# --------------------------------------------------------------------------- Lagrangian relaxation


class _UnitDp:
    """Per-unit relaxed DP over power cells.

    ``[p_min, p_max]`` is split into ``levels - 1`` equal cells.  Running in a
    cell costs the exact minimum of ``C(P) - lam P`` over the cell, and two
    cells may follow each other if some pair of their points respects the ramp
    limits.  The cell model can only under-estimate the true subproblem
    minimum, so the dual value stays a lower bound.
    """

    def __init__(self, unit: UcUnit, levels: int):
        self.unit = unit
        k = 1 if unit.p_max <= unit.p_min else max(1, levels - 1)
        edges = np.linspace(unit.p_min, unit.p_max, k + 1)
        self.lo, self.hi = edges[:-1], edges[1:]
        up, dn = unit.ramp_up, unit.ramp_down
        self.compat = ((self.lo[None, :] - self.hi[:, None] <= up + 1e-12)
                       & (self.lo[:, None] - self.hi[None, :] <= dn + 1e-12)).astype(np.uint8)
        p0 = unit.init_p
        self.init_compat = ((self.lo - p0 <= up + 1e-12) & (p0 - self.hi <= dn + 1e-12)).astype(np.uint8)

    def solve(self, lam: np.ndarray):
        T, K = lam.size, self.lo.size
        cost = self.unit.cost
        stage = np.empty((T, K))
        arg = np.empty((T, K))
        for t in range(T):
            for j in range(K):
                p = cost.net_argmin(lam[t], self.lo[j], self.hi[j])[0]
                arg[t, j] = p
                stage[t, j] = float(cost(p)) - lam[t] * p
        if self.unit.must_run:
            cell, value = self._always_on(stage)
            u = np.ones(T, dtype=int)
        else:
            u, cell, value = kernels.uc_dp(stage, self.compat, self.init_compat,
                                           float(self.unit.startup), int(self.unit.min_up),
                                           int(self.unit.min_down), bool(self.unit.init_on))
        p = np.where(u > 0, arg[np.arange(T), np.maximum(cell, 0)], 0.0)
        return np.asarray(u, dtype=int), p, float(value)

    def _always_on(self, stage):
        T, K = stage.shape
        start = np.where(self.init_compat > 0 if self.unit.init_on else True, stage[0], np.inf)
        if not self.unit.init_on:
            start = start + self.unit.startup
        val = start
        back = np.zeros((T, K), dtype=int)
        for t in range(1, T):
            cand = np.where(self.compat > 0, val[:, None], np.inf)
            back[t] = np.argmin(cand, axis=0)
            val = cand[back[t], np.arange(K)] + stage[t]
        j = int(np.argmin(val))
        cells = np.empty(T, dtype=int)
        for t in range(T - 1, -1, -1):
            cells[t] = j
            j = back[t, j]
        return cells, float(val.min())


def _repair(inst: UcInstance, u: np.ndarray) -> np.ndarray | None:
    """Switch on cheap units until capacity covers demand, keeping min up/down."""
    u = u.copy()
    d = inst.demand
    pmax = np.array([x.p_max for x in inst.units])
    order = np.argsort([float(x.cost(x.p_max)) / max(x.p_max, 1e-12) for x in inst.units])
    for t in range(inst.T):
        while pmax @ u[:, t] < d[t] - 1e-9:
            for m in order:
                if u[m, t]:
                    continue
                trial = u.copy()
                unit = inst.units[m]
                trial[m, t:t + unit.min_up] = 1
                # close an off gap before t that is now too short
                prev_on = [s for s in range(t) if trial[m, s]]
                if prev_on and t - prev_on[-1] - 1 < unit.min_down:
                    trial[m, prev_on[-1]:t] = 1
                if not commitment_violations(inst, trial):
                    u = trial
                    break
            else:
                return None
    return u


def uc_lagrangian(inst: UcInstance, iters: int = 500, levels: int = 21, step_scale: float | None = None,
                  polish: bool = True, max_candidates: int = 200, polyak_iters: int = 200) -> UcSchedule:
    """Lagrangian relaxation of the balance rows, solved by subgradient ascent.

    Each dual evaluation runs one DP per unit.  A primal schedule is recovered
    from the commitment patterns visited by the dual iterates (most valuable
    first): each is repaired for capacity, dispatched with ramps by QP, and the
    best is polished by single on/off flips.  ``dual_bound`` is the best dual
    value seen, a lower bound on the optimum; a final round of Polyak steps
    aimed at the primal cost tightens it.
    """
    units = inst.units
    dps = [_UnitDp(x, levels) for x in units]
    d = inst.demand
    patterns: dict[bytes, float] = {}

    def oracle(lam):
        value = float(lam @ d)
        total = np.zeros(inst.T)
        us = []
        for dp in dps:
            u, p, v = dp.solve(lam)
            value += v
            total += p
            us.append(u)
        key = np.array(us, dtype=np.int8).tobytes()
        patterns[key] = max(patterns.get(key, -np.inf), value)
        return value, d - total

    marg = [m for x in units for m in (x.cost.marginal(x.p_min) + x.cost.marginal(x.p_max))]
    lam0 = np.full(inst.T, float(np.median(marg)))
    scale = step_scale or max(1.0, max(abs(v) for v in marg))

    def step(k, g):
        return scale / ((1.0 + k) * max(np.linalg.norm(g), 1e-12))

    res = subgradient_max(oracle, lam0, step=step, iters=iters)

    shape = (inst.n_units, inst.T)
    ranked = sorted(patterns.items(), key=lambda kv: -kv[1])[:max_candidates]
    cands = [np.frombuffer(k, dtype=np.int8).reshape(shape).astype(int) for k, _ in ranked]
    cands.append(np.ones(shape, dtype=int))
    best = None
    seen = set()
    queue = list(cands)
    expanded = 0
    while queue:
        u = _repair(inst, queue.pop(0))
        if u is None or u.tobytes() in seen:
            continue
        seen.add(u.tobytes())
        out = dispatch_commitment(inst, u)
        if out is not None:
            if best is None or out[1] < best[2] - 1e-12:
                best = (u, out[0], out[1])
        elif expanded < max_candidates // 10:
            # ramps or minimum outputs can rule a pattern out; try its neighbours
            expanded += 1
            for m in range(inst.n_units):
                for t in range(inst.T):
                    v = u.copy()
                    v[m, t] ^= 1
                    queue.append(v)
    if best is None:
        cap = np.array([x.p_max for x in units]).sum()
        bad = [t for t in range(inst.T) if d[t] > cap - 1e-9]
        raise InfeasibleError(f"primal recovery failed; tight periods {bad}")
    if polish:
        improved = True
        while improved:
            improved = False
            for m in range(inst.n_units):
                for t in range(inst.T):
                    u = best[0].copy()
                    u[m, t] ^= 1
                    if u.tobytes() in seen:
                        continue
                    seen.add(u.tobytes())
                    out = dispatch_commitment(inst, u)
                    if out is not None and out[1] < best[2] - 1e-9 * max(1.0, abs(best[2])):
                        best = (u, out[0], out[1])
                        improved = True
    u, p, cost = best
    dual = res.value
    n_iter = len(res.trace)
    if polyak_iters and cost - dual > 1e-9 * max(1.0, abs(cost)):
        # with the primal cost as target, Polyak steps close the gap fast when there is none
        res2 = subgradient_max(oracle, res.lam, iters=polyak_iters, target=cost)
        if res2.value > dual:
            dual, res = res2.value, res2
        n_iter += len(res2.trace)
    gap = (cost - dual) / max(abs(cost), 1e-12)
    return UcSchedule(u, p, cost, dual, gap, res.lam,
                      info={"iterations": n_iter, "candidates": len(seen),
                            "kernel_backend": kernels.BACKEND})
