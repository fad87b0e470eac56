"""Demand response by dual decomposition, load curtailment, and PEV valley filling.

Welfare scheduling over ``T`` periods::

    min  sum_t C_t(s_t) - sum_{r,a} U_ra(p_ra)
    s.t. s_t = sum_{r,a} p_ra[t],   p_ra in P_ra,   s_min <= s_t <= s_max

with ``C_t(s) = c2_t s^2 + c1_t s`` and ``U_ra(p) = -sum_t w_t (p_t - target_t)^2``.
``P_ra`` holds per-slot bounds and optionally a total-energy equality
(``energy``) or cap (``energy_max``).

Agents in the distributed solvers only talk through a :class:`Mailbox`; the
LSE (or aggregator) broadcasts prices and collects schedules.
"""
from __future__ import annotations

import csv
import io
import logging
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .errors import GridkitError, InfeasibleError
from .kernels import box_sum_solve
from .optim import QpBuilder, require_optimal, solve_qp

log = logging.getLogger(__name__)


def _vec(v, T, name):
    a = np.broadcast_to(np.asarray(v, dtype=float), (T,)).copy()
    if not np.all(np.isfinite(a)) and name not in ("s_min", "s_max", "p_min", "p_max"):
        raise GridkitError(f"{name} must be finite")
    return a


@dataclass(frozen=True, eq=False)
class Appliance:
    weight: np.ndarray
    target: np.ndarray
    p_min: np.ndarray
    p_max: np.ndarray
    energy: float | None = None
    energy_max: float | None = None

    def __post_init__(self):
        T = max(np.size(getattr(self, n)) for n in ("weight", "target", "p_min", "p_max"))
        for name in ("weight", "target", "p_min", "p_max"):
            object.__setattr__(self, name, _vec(getattr(self, name), T, name))
        if np.any(self.weight <= 0):
            raise GridkitError("appliance utility weights must be positive")
        if np.any(self.p_min > self.p_max):
            raise GridkitError("appliance p_min exceeds p_max")
        if self.energy is not None and self.energy_max is not None:
            raise GridkitError("give either energy or energy_max, not both")
        lo, hi = self.p_min.sum(), self.p_max.sum()
        if self.energy is not None and not lo - 1e-9 <= self.energy <= hi + 1e-9:
            raise InfeasibleError(f"energy {self.energy} outside [{lo}, {hi}]")
        if self.energy_max is not None and self.energy_max < lo - 1e-9:
            raise InfeasibleError(f"energy cap {self.energy_max} below minimum use {lo}")

    @property
    def T(self) -> int:
        return self.weight.size

    def with_periods(self, T: int) -> "Appliance":
        if self.T == T:
            return self
        if self.T != 1:
            raise GridkitError(f"appliance has {self.T} periods, instance has {T}")
        return Appliance(np.full(T, self.weight[0]), np.full(T, self.target[0]),
                         np.full(T, self.p_min[0]), np.full(T, self.p_max[0]),
                         self.energy, self.energy_max)

    def utility(self, p) -> float:
        return float(-np.sum(self.weight * (np.asarray(p) - self.target) ** 2))

    def respond(self, price) -> np.ndarray:
        """Best response ``argmin -U(p) + price'p`` over the feasible set."""
        w2 = 0.5 / self.weight
        c = self.target - price * w2
        free = np.clip(c, self.p_min, self.p_max)
        if self.energy is None and (self.energy_max is None or free.sum() <= self.energy_max):
            return free
        total = float(self.energy if self.energy is not None else self.energy_max)
        lo, hi = self.p_min, self.p_max
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            # open bounds: replace by ones far enough out to stay inactive
            fin = np.concatenate([(c - lo)[np.isfinite(lo)] / w2[np.isfinite(lo)],
                                  (c - hi)[np.isfinite(hi)] / w2[np.isfinite(hi)]])
            k = 2.0 * (abs(c.sum() - total) / w2.sum() + np.abs(fin).max(initial=0.0)) + 1.0
            lo = np.where(np.isfinite(lo), lo, c - k * w2)
            hi = np.where(np.isfinite(hi), hi, c + k * w2)
        return box_sum_solve(c, w2, lo, hi, total)[0]

    @classmethod
    def from_dict(cls, d: dict, T: int) -> "Appliance":
        extra = set(d) - {"weight", "target", "p_min", "p_max", "energy", "energy_max"}
        if extra:
            raise GridkitError(f"unknown appliance keys {sorted(extra)}")
        return cls(_vec(d.get("weight", 1.0), T, "weight"), _vec(d.get("target", 0.0), T, "target"),
                   _vec(d.get("p_min", -np.inf), T, "p_min"), _vec(d.get("p_max", np.inf), T, "p_max"),
                   d.get("energy"), d.get("energy_max"))

    def to_dict(self) -> dict:
        out = {"weight": self.weight.tolist(), "target": self.target.tolist(),
               "p_min": self.p_min.tolist(), "p_max": self.p_max.tolist()}
        if self.energy is not None:
            out["energy"] = self.energy
        if self.energy_max is not None:
            out["energy_max"] = self.energy_max
        return out


@dataclass(frozen=True, eq=False)
class DrInstance:
    T: int
    users: tuple               # tuple of tuples of Appliance
    c2: np.ndarray
    c1: np.ndarray
    s_min: np.ndarray
    s_max: np.ndarray

    def __post_init__(self):
        if self.T < 1:
            raise GridkitError("need at least one period")
        users = tuple(tuple(a.with_periods(self.T) for a in u) for u in self.users)
        if not users or not any(users):
            raise GridkitError("instance has no appliances")
        object.__setattr__(self, "users", users)
        for name in ("c2", "c1", "s_min", "s_max"):
            object.__setattr__(self, name, _vec(getattr(self, name), self.T, name))
        if np.any(self.c2 < 0):
            raise GridkitError("LSE cost must be convex (c2 >= 0)")
        if np.any(self.s_min > self.s_max):
            raise GridkitError("s_min exceeds s_max")

    @property
    def appliances(self) -> list:
        return [a for u in self.users for a in u]

    def cost(self, s) -> float:
        s = np.asarray(s)
        return float(np.sum(self.c2 * s ** 2 + self.c1 * s))

    def welfare(self, p_list) -> float:
        s = np.sum(p_list, axis=0)
        return sum(a.utility(p) for a, p in zip(self.appliances, p_list)) - self.cost(s)

    @classmethod
    def from_dict(cls, d: dict) -> "DrInstance":
        T = int(d["T"])
        lse = d.get("lse", {})
        users = tuple(tuple(Appliance.from_dict(a, T) for a in u["appliances"]) for u in d["users"])
        return cls(T, users, _vec(lse.get("c2", 0.0), T, "c2"), _vec(lse.get("c1", 0.0), T, "c1"),
                   _vec(lse.get("s_min", -np.inf), T, "s_min"), _vec(lse.get("s_max", np.inf), T, "s_max"))

    def to_dict(self) -> dict:
        return {"T": self.T,
                "lse": {"c2": self.c2.tolist(), "c1": self.c1.tolist(),
                        "s_min": self.s_min.tolist(), "s_max": self.s_max.tolist()},
                "users": [{"appliances": [a.to_dict() for a in u]} for u in self.users]}


class Mailbox:
    """In-process message exchange between named agents."""

    def __init__(self):
        self._queues = defaultdict(list)
        self.sent = 0

    def send(self, sender: str, recipient: str, payload) -> None:
        self._queues[recipient].append((sender, payload))
        self.sent += 1

    def broadcast(self, sender: str, recipients, payload) -> None:
        for r in recipients:
            self.send(sender, r, payload)

    def receive(self, recipient: str) -> list:
        msgs = self._queues.pop(recipient, [])
        return msgs


@dataclass
class DrResult:
    schedules: list              # per user: array (n_appliances, T)
    supply: np.ndarray
    prices: np.ndarray
    welfare: float
    mode: str
    iterations: int = 0
    dual_value: float | None = None
    gap: float | None = None
    converged: bool = True
    messages: int = 0

    def to_dict(self) -> dict:
        return {"mode": self.mode, "welfare": self.welfare, "prices": self.prices.tolist(),
                "supply": self.supply.tolist(), "schedules": [s.tolist() for s in self.schedules],
                "iterations": self.iterations, "dual_value": self.dual_value, "gap": self.gap,
                "converged": self.converged, "messages": self.messages}


def _split(inst, flat):
    out, k = [], 0
    for u in inst.users:
        out.append(np.array(flat[k:k + len(u)]).reshape(len(u), inst.T))
        k += len(u)
    return out


def _dr_central(inst: DrInstance) -> DrResult:
    T = inst.T
    qb = QpBuilder()
    s = qb.add_vars(T)
    pv = []
    for a in inst.appliances:
        x = qb.add_vars(T)
        pv.append(x)
        for t in range(T):
            i = int(x[t])
            # w (p - target)^2 without its constant
            qb.add_quadratic(i, i, a.weight[t])
            qb.add_linear(i, -2 * a.weight[t] * a.target[t])
            qb.add_bounds(i, a.p_min[t], a.p_max[t])
        if a.energy is not None:
            qb.add_eq({int(i): 1.0 for i in x}, a.energy)
        elif a.energy_max is not None:
            qb.add_le({int(i): 1.0 for i in x}, a.energy_max)
    rows = []
    for t in range(T):
        i = int(s[t])
        qb.add_quadratic(i, i, inst.c2[t])
        qb.add_linear(i, inst.c1[t])
        qb.add_bounds(i, inst.s_min[t], inst.s_max[t])
        terms = {i: 1.0}
        for x in pv:
            terms[int(x[t])] = -1.0
        rows.append(qb.add_eq(terms, 0.0))
    sol = require_optimal(solve_qp(qb.build(), tol=1e-10, max_iter=200), "demand response")
    flat = [sol.x[x] for x in pv]
    return DrResult(_split(inst, flat), sol.x[s], sol.eq_duals[rows], inst.welfare(flat), "central")


def _lse_respond(inst, price, demand):
    """Supply that maximises ``price*s - C(s)``; at a linear cost's kink it follows demand."""
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(inst.c2 > 0, (price - inst.c1) / (2 * inst.c2),
                     np.where(price > inst.c1, np.inf, -np.inf))
    kink = (inst.c2 == 0) & (price == inst.c1)
    s = np.where(kink, demand, s)
    return np.clip(s, inst.s_min, inst.s_max)


def _price_domain(inst):
    """Prices at which the supply subproblem stays bounded."""
    linear = inst.c2 == 0
    lo = np.where(linear & np.isinf(inst.s_min), inst.c1, -np.inf)
    hi = np.where(linear & np.isinf(inst.s_max), inst.c1, np.inf)
    return lo, hi


def _dr_dual(inst: DrInstance, max_iter: int, tol: float, step: float | None) -> DrResult:
    T = inst.T
    mb = Mailbox()
    names = [f"user{r}" for r in range(len(inst.users))]
    smooth = np.all(inst.c2 > 0)
    if step is None:
        if smooth:
            # gradient of the dual is Lipschitz with this constant
            lip = sum(float(np.max(0.5 / a.weight)) for a in inst.appliances)
            lip += float(np.max(0.5 / inst.c2))
            step = 1.0 / lip
        else:
            step = 1.0
    p_lo, p_hi = _price_domain(inst)
    price = np.clip(inst.c1 + 2 * inst.c2 * np.sum([a.target for a in inst.appliances], axis=0), p_lo, p_hi)
    best = None
    it = 0
    converged = False
    for it in range(1, max_iter + 1):
        mb.broadcast("lse", names, price)
        for r, name in enumerate(names):
            (_, pr), = mb.receive(name)
            mb.send(name, "lse", (r, np.array([a.respond(pr) for a in inst.users[r]])))
        sched = [None] * len(names)
        for _, (r, p) in mb.receive("lse"):
            sched[r] = p
        flat = [row for p in sched for row in p]
        demand = np.sum(flat, axis=0)
        s = _lse_respond(inst, price, demand)
        g = demand - s
        dual = (inst.cost(s) - sum(a.utility(p) for a, p in zip(inst.appliances, flat))
                + float(price @ g))
        feasible = np.all(demand >= inst.s_min - 1e-9) and np.all(demand <= inst.s_max + 1e-9)
        primal = -inst.welfare(flat) if feasible else np.inf
        if best is None or primal < best[0] or (primal == best[0] == np.inf and dual > best[1]):
            best = (primal, dual, sched, demand, price.copy())
        lr = step if smooth else step / (it * max(1.0, float(np.linalg.norm(g))))
        new = np.clip(price + lr * g, p_lo, p_hi)
        change = float(np.abs(new - price).max())
        price = new
        if change < tol:
            converged = True
            break
    primal, _, sched, demand, pr = best
    welfare = -primal if np.isfinite(primal) else float("-inf")
    gap = float(primal - dual) if np.isfinite(primal) else None
    if not converged:
        log.warning("dual decomposition stopped after %d iterations (price change %.3e)", it, change)
    return DrResult(sched, demand, pr, welfare, "dual", it, float(dual), gap, converged, mb.sent)


def dr_solve(inst: DrInstance, mode: str = "central", max_iter: int = 20000, tol: float = 1e-6,
             step: float | None = None) -> DrResult:
    """Welfare-maximising schedules and per-period prices.

    ``central`` solves the whole program as one QP.  ``dual`` relaxes the
    balance with prices: each user answers a price broadcast with the best
    responses of its appliances, the LSE with its best supply, and prices
    move along the supply shortfall.  With every ``c2 > 0`` the dual is smooth
    and the default step is ``1/L`` for its gradient's Lipschitz constant ``L``;
    otherwise a normalised diminishing step is used.  Stops when no price moves
    by more than ``tol``.
    """
    if mode == "central":
        return _dr_central(inst)
    if mode == "dual":
        return _dr_dual(inst, max_iter, tol, step)
    raise GridkitError(f"unknown mode {mode!r}")


@dataclass
class Curtailment:
    allocation: list             # per user: array per appliance
    price: float
    discomfort: float

    def to_dict(self) -> dict:
        return {"allocation": [a.tolist() for a in self.allocation], "price": self.price,
                "discomfort": self.discomfort}


def curtail_solve(users, deficit: float) -> Curtailment:
    """Split a single-period power deficit among users at least total discomfort.

    ``users`` is a sequence of appliance lists; each appliance is single-period
    with discomfort ``-U(p) = w (p - target)^2``.  The returned price equalises
    marginal discomfort at the interior, reported as a positive number when
    curtailment is costly.
    """
    users = [[a.with_periods(1) for a in u] for u in users]
    apps = [a for u in users for a in u]
    lo = sum(float(a.p_min[0]) for a in apps)
    hi = sum(float(a.p_max[0]) for a in apps)
    if not lo - 1e-9 <= deficit <= hi + 1e-9:
        raise InfeasibleError(f"deficit {deficit} outside [{lo}, {hi}]")
    inst = DrInstance(1, tuple(tuple(u) for u in users), 0.0, 0.0, deficit, deficit)
    res = _dr_central(inst)
    alloc = [s[:, 0] for s in res.schedules]
    # the balance dual is the marginal discomfort of one more unit of shortfall
    return Curtailment(alloc, float(res.prices[0]), -res.welfare)


@dataclass(frozen=True, eq=False)
class PevFleet:
    demand: np.ndarray          # base load D(t)
    r_min: np.ndarray           # (N, T)
    r_max: np.ndarray           # (N, T)
    energy: np.ndarray          # B_n

    def __post_init__(self):
        D = np.asarray(self.demand, dtype=float).ravel()
        B = np.asarray(self.energy, dtype=float).ravel()
        N, T = B.size, D.size
        lo = np.broadcast_to(np.asarray(self.r_min, dtype=float).reshape(-1, 1) if np.ndim(self.r_min) == 1
                             else np.asarray(self.r_min, dtype=float), (N, T)).copy()
        hi = np.broadcast_to(np.asarray(self.r_max, dtype=float).reshape(-1, 1) if np.ndim(self.r_max) == 1
                             else np.asarray(self.r_max, dtype=float), (N, T)).copy()
        for name, v in (("demand", D), ("r_min", lo), ("r_max", hi), ("energy", B)):
            object.__setattr__(self, name, v)
            if not np.all(np.isfinite(v)):
                raise GridkitError(f"{name} must be finite")
        if N == 0 or T == 0:
            raise GridkitError("fleet needs at least one vehicle and one slot")
        if np.any(lo > hi):
            raise GridkitError("r_min exceeds r_max")
        bad = np.flatnonzero((hi.sum(1) < B - 1e-9) | (lo.sum(1) > B + 1e-9))
        if bad.size:
            raise InfeasibleError(f"vehicles {bad.tolist()} cannot meet their energy requirement")

    @property
    def N(self) -> int:
        return self.energy.size

    @property
    def T(self) -> int:
        return self.demand.size

    def objective(self, r) -> float:
        return float(np.sum((self.demand + np.asarray(r).sum(0)) ** 2))

    @classmethod
    def from_dict(cls, d: dict) -> "PevFleet":
        D = np.asarray(d["demand"], dtype=float)
        veh = d["vehicles"]
        T = D.size
        lo = [np.broadcast_to(np.asarray(v.get("r_min", 0.0), dtype=float), (T,)) for v in veh]
        hi = [np.broadcast_to(np.asarray(v["r_max"], dtype=float), (T,)) for v in veh]
        for v in veh:
            extra = set(v) - {"energy", "r_min", "r_max"}
            if extra:
                raise GridkitError(f"unknown vehicle keys {sorted(extra)}")
        return cls(D, np.array(lo), np.array(hi), np.array([float(v["energy"]) for v in veh]))

    def to_dict(self) -> dict:
        return {"demand": self.demand.tolist(),
                "vehicles": [{"energy": float(b), "r_min": lo.tolist(), "r_max": hi.tolist()}
                             for b, lo, hi in zip(self.energy, self.r_min, self.r_max)]}


@dataclass
class ChargingProfiles:
    r: np.ndarray                # (N, T)
    load: np.ndarray             # D + sum_n r_n
    objective: float
    iterations: int = 0
    converged: bool = True
    prices: list = field(default_factory=list)       # p^k per iteration
    loads: list = field(default_factory=list)
    objectives: list = field(default_factory=list)
    max_change: float | None = None

    def to_dict(self) -> dict:
        return {"profiles": self.r.tolist(), "load": self.load.tolist(), "objective": self.objective,
                "iterations": self.iterations, "converged": self.converged,
                "max_change": self.max_change}

    def trace_csv(self) -> str:
        """One row per iteration: objective, then price and load per slot."""
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        T = self.load.size
        wr.writerow(["iteration", "objective"] + [f"price_{t}" for t in range(T)]
                    + [f"load_{t}" for t in range(T)])
        for k, (obj, p, L) in enumerate(zip(self.objectives, self.prices, self.loads), start=1):
            wr.writerow([k, repr(obj)] + [repr(float(v)) for v in p] + [repr(float(v)) for v in L])
        return buf.getvalue()


def pev_central(fleet: PevFleet) -> ChargingProfiles:
    """Valley filling as one QP: minimise ``sum_t (D + sum_n r_n)^2``."""
    N, T = fleet.N, fleet.T
    qb = QpBuilder()
    x = qb.add_vars(N * T).reshape(N, T)
    for t in range(T):
        qb.add_form(x[:, t], np.ones((N, N)))
        for i in x[:, t]:
            qb.add_linear(int(i), 2 * fleet.demand[t])
    for n in range(N):
        for t in range(T):
            qb.add_bounds(int(x[n, t]), fleet.r_min[n, t], fleet.r_max[n, t])
        qb.add_eq({int(i): 1.0 for i in x[n]}, fleet.energy[n])
    sol = require_optimal(solve_qp(qb.build(), tol=1e-11, max_iter=300), "valley filling")
    r = sol.x[x]
    return ChargingProfiles(r, fleet.demand + r.sum(0), fleet.objective(r))


def pev_distributed(fleet: PevFleet, max_iters: int = 500, tol: float = 1e-6) -> ChargingProfiles:
    """Decentralised valley filling.

    Starting from ``p = D`` and ``r = 0`` each vehicle minimises
    ``p'r_n + N/2 |r_n - r_n^k|^2`` over its own constraints, then the
    aggregator resets the price to the new total load.  This is projected
    gradient descent with step ``1/N`` on half the central objective, so the
    objective never increases after the first (feasible) iterate.  The trace
    holds one entry per iteration, starting with iteration 1.  Stops when no profile entry moves by ``tol``.
    """
    N, T = fleet.N, fleet.T
    mb = Mailbox()
    names = [f"ev{n}" for n in range(N)]
    r = np.zeros((N, T))
    price = fleet.demand.copy()
    out = ChargingProfiles(r, fleet.demand.copy(), fleet.objective(r), converged=False)
    change = np.inf
    it = 0
    for it in range(1, max_iters + 1):
        mb.broadcast("aggregator", names, price)
        for n, name in enumerate(names):
            (_, p), = mb.receive(name)
            # argmin p'r + N/2 |r - r_k|^2  =  clip(r_k - (p + nu)/N) with sum = B
            rn = box_sum_solve(r[n] - p / N, np.full(T, 1.0 / N), fleet.r_min[n], fleet.r_max[n],
                               float(fleet.energy[n]))[0]
            mb.send(name, "aggregator", (n, rn))
        new = np.empty_like(r)
        for _, (n, rn) in mb.receive("aggregator"):
            new[n] = rn
        change = float(np.abs(new - r).max())
        r = new
        price = fleet.demand + r.sum(0)
        out.prices.append(price.copy())
        out.loads.append(price.copy())
        out.objectives.append(fleet.objective(r))
        if change < tol:
            out.converged = True
            break
    if not out.converged:
        log.warning("distributed charging stopped after %d iterations (change %.3e)", it, change)
    out.r = r
    out.load = fleet.demand + r.sum(0)
    out.objective = fleet.objective(r)
    out.iterations = it
    out.max_change = change
    return out
