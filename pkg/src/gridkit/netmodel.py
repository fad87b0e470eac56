"""Grid case parsing and the AC / DC network models built from it.

Everything here is in per unit with angles in radians.  Buses are addressed by
their case ``id`` in files and by position (0..N_b-1) in every array.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .costs import CostFunction
from .errors import CaseError, DimensionError

BUS_TYPES = ("slack", "PV", "PQ")

_BUS_KEYS = {"id", "type", "b_shunt", "v_min", "v_max"}
_BRANCH_KEYS = {"from", "to", "r", "x", "b_c", "tap", "shift", "p_max", "s_max"}
_GEN_KEYS = {"bus", "p_min", "p_max", "q_min", "q_max", "cost"}
_COST_KEYS = {"c2", "c1", "c0", "breakpoints"}
_LOAD_KEYS = {"bus", "p", "q"}
_TOP_KEYS = {"version", "buses", "branches", "generators", "loads"}


@dataclass(frozen=True)
class Bus:
    id: int
    type: str
    b_shunt: float = 0.0
    v_min: float = 0.9
    v_max: float = 1.1


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    x: float
    r: float = 0.0
    b_c: float = 0.0
    tap: float = 1.0
    shift: float = 0.0
    p_max: float = np.inf
    s_max: float = np.inf

    @property
    def ratio(self) -> complex:
        return self.tap * np.exp(1j * self.shift)


@dataclass(frozen=True)
class Generator:
    bus: int
    p_min: float
    p_max: float
    q_min: float = -np.inf
    q_max: float = np.inf
    cost: CostFunction = field(default_factory=CostFunction)


@dataclass(frozen=True)
class Load:
    bus: int
    p: float = 0.0
    q: float = 0.0


@dataclass(frozen=True)
class GridCase:
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    generators: tuple[Generator, ...] = ()
    loads: tuple[Load, ...] = ()

    def __post_init__(self):
        _validate(self)

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def n_branch(self) -> int:
        return len(self.branches)

    @property
    def bus_ids(self) -> list[int]:
        return [b.id for b in self.buses]

    @property
    def bus_index(self) -> dict[int, int]:
        return {b.id: k for k, b in enumerate(self.buses)}

    @property
    def slack(self) -> int:
        """Position of the slack (reference) bus."""
        return next(k for k, b in enumerate(self.buses) if b.type == "slack")

    @property
    def from_idx(self) -> np.ndarray:
        idx = self.bus_index
        return np.array([idx[br.from_bus] for br in self.branches], dtype=int)

    @property
    def to_idx(self) -> np.ndarray:
        idx = self.bus_index
        return np.array([idx[br.to_bus] for br in self.branches], dtype=int)

    def bus_load(self) -> tuple[np.ndarray, np.ndarray]:
        p = np.zeros(self.n_bus)
        q = np.zeros(self.n_bus)
        idx = self.bus_index
        for ld in self.loads:
            p[idx[ld.bus]] += ld.p
            q[idx[ld.bus]] += ld.q
        return p, q

    def gen_bus_idx(self) -> np.ndarray:
        idx = self.bus_index
        return np.array([idx[g.bus] for g in self.generators], dtype=int)

    def n_components(self, branch_mask=None) -> int:
        return connected_components_of(self, branch_mask)[0]

    def with_branches(self, keep) -> "GridCase":
        """Copy keeping only the branches whose positions are in ``keep``."""
        keep = set(int(k) for k in keep)
        return GridCase(self.buses, tuple(br for k, br in enumerate(self.branches) if k in keep),
                        self.generators, self.loads)

    def to_dict(self) -> dict:
        def num(v):
            return None if v is None or not np.isfinite(v) else float(v)

        return {
            "version": 1,
            "buses": [{"id": b.id, "type": b.type, "b_shunt": b.b_shunt, "v_min": b.v_min,
                       "v_max": b.v_max} for b in self.buses],
            "branches": [{"from": br.from_bus, "to": br.to_bus, "r": br.r, "x": br.x, "b_c": br.b_c,
                          "tap": br.tap, "shift": br.shift, "p_max": num(br.p_max),
                          "s_max": num(br.s_max)} for br in self.branches],
            "generators": [{"bus": g.bus, "p_min": g.p_min, "p_max": g.p_max, "q_min": num(g.q_min),
                            "q_max": num(g.q_max), "cost": g.cost.to_dict()} for g in self.generators],
            "loads": [{"bus": ld.bus, "p": ld.p, "q": ld.q} for ld in self.loads],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1)


def connected_components_of(case: GridCase, branch_mask=None) -> tuple[int, np.ndarray]:
    f, t = case.from_idx, case.to_idx
    if branch_mask is not None:
        mask = np.asarray(branch_mask, dtype=bool)
        f, t = f[mask], t[mask]
    n = case.n_bus
    graph = coo_matrix((np.ones(len(f)), (f, t)), shape=(n, n))
    return connected_components(graph, directed=False)


def _validate(case: GridCase) -> None:
    ids = [b.id for b in case.buses]
    if len(set(ids)) != len(ids):
        raise CaseError("duplicate bus id")
    for b in case.buses:
        if b.type not in BUS_TYPES:
            raise CaseError(f"bus {b.id}: unknown type {b.type!r}")
    n_slack = sum(b.type == "slack" for b in case.buses)
    if n_slack == 0:
        raise CaseError("missing slack bus")
    if n_slack > 1:
        raise CaseError(f"expected exactly one slack bus, found {n_slack}")
    known = set(ids)
    for k, br in enumerate(case.branches):
        for end in (br.from_bus, br.to_bus):
            if end not in known:
                raise CaseError(f"dangling branch endpoint: branch {k} references unknown bus {end}")
        if br.from_bus == br.to_bus:
            raise CaseError(f"branch {k} is a self-loop at bus {br.from_bus}")
        if not br.x > 0:
            raise CaseError(f"nonpositive reactance on branch {k} (x={br.x})")
        if br.tap < 0:
            raise CaseError(f"negative tap ratio on branch {k}")
    for k, g in enumerate(case.generators):
        if g.bus not in known:
            raise CaseError(f"generator {k} references unknown bus {g.bus}")
        if g.p_min > g.p_max:
            raise CaseError(f"generator {k}: p_min > p_max")
    for k, ld in enumerate(case.loads):
        if ld.bus not in known:
            raise CaseError(f"load {k} references unknown bus {ld.bus}")


def _check_keys(rec, allowed: set, required: set, what: str):
    if not isinstance(rec, dict):
        raise CaseError(f"{what}: expected an object, got {type(rec).__name__}")
    unknown = set(rec) - allowed
    if unknown:
        raise CaseError(f"{what}: unknown key(s) {sorted(unknown)}")
    missing = required - set(rec)
    if missing:
        raise CaseError(f"{what}: missing key(s) {sorted(missing)}")


def _num(v, default):
    # JSON null encodes "unbounded" for limits
    if v is None:
        return default
    return float(v)


def parse_case(text: str) -> GridCase:
    """Parse a version-1 case JSON document into a validated :class:`GridCase`."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CaseError(f"malformed JSON: {exc}") from None
    return case_from_dict(doc)


def case_from_dict(doc: dict) -> GridCase:
    _check_keys(doc, _TOP_KEYS, {"version", "buses", "branches"}, "case")
    if doc["version"] != 1:
        raise CaseError(f"unsupported case version {doc['version']!r}")
    try:
        buses = []
        for k, b in enumerate(doc["buses"]):
            _check_keys(b, _BUS_KEYS, {"id", "type"}, f"bus[{k}]")
            buses.append(Bus(int(b["id"]), str(b["type"]), _num(b.get("b_shunt"), 0.0),
                             _num(b.get("v_min"), 0.9), _num(b.get("v_max"), 1.1)))
        branches = []
        for k, br in enumerate(doc["branches"]):
            _check_keys(br, _BRANCH_KEYS, {"from", "to", "x"}, f"branch[{k}]")
            tap = _num(br.get("tap"), 1.0)
            branches.append(Branch(
                int(br["from"]), int(br["to"]), float(br["x"]), _num(br.get("r"), 0.0),
                _num(br.get("b_c"), 0.0),
                1.0 if tap == 0 else tap,  # tap 0 is the customary "no transformer" marker
                _num(br.get("shift"), 0.0), _num(br.get("p_max"), np.inf),
                _num(br.get("s_max"), np.inf)))
        gens = []
        for k, g in enumerate(doc.get("generators", [])):
            _check_keys(g, _GEN_KEYS, {"bus", "p_min", "p_max"}, f"generator[{k}]")
            cost = g.get("cost") or {}
            _check_keys(cost, _COST_KEYS, set(), f"generator[{k}].cost")
            gens.append(Generator(int(g["bus"]), float(g["p_min"]), float(g["p_max"]),
                                  _num(g.get("q_min"), -np.inf), _num(g.get("q_max"), np.inf),
                                  CostFunction.from_dict(cost)))
        loads = []
        for k, ld in enumerate(doc.get("loads", [])):
            _check_keys(ld, _LOAD_KEYS, {"bus"}, f"load[{k}]")
            loads.append(Load(int(ld["bus"]), _num(ld.get("p"), 0.0), _num(ld.get("q"), 0.0)))
    except (TypeError, ValueError) as exc:
        raise CaseError(f"malformed value: {exc}") from None
    return GridCase(tuple(buses), tuple(branches), tuple(gens), tuple(loads))


def load_case(path) -> GridCase:
    with open(path, encoding="utf-8") as fh:
        return parse_case(fh.read())


# --------------------------------------------------------------------------- AC model


@dataclass(frozen=True, eq=False)
class AdmittanceModel:
    """Bus admittance matrix plus the per-branch two-port blocks.

    ``Yf @ v`` and ``Yt @ v`` give the currents entering each branch at its
    from and to end; ``Cf``/``Ct`` select the terminal voltages.
    """

    Y: np.ndarray
    Yf: np.ndarray
    Yt: np.ndarray
    Cf: np.ndarray
    Ct: np.ndarray
    y_series: np.ndarray
    b_shunt: np.ndarray

    @property
    def G(self) -> np.ndarray:
        return self.Y.real

    @property
    def B(self) -> np.ndarray:
        return self.Y.imag

    @property
    def n_bus(self) -> int:
        return self.Y.shape[0]

    @property
    def symmetric(self) -> bool:
        return bool(np.allclose(self.Y, self.Y.T, rtol=0, atol=1e-14))


def build_admittance(case: GridCase) -> AdmittanceModel:
    nb, nl = case.n_bus, case.n_branch
    f, t = case.from_idx, case.to_idx
    y = np.array([1.0 / complex(br.r, br.x) for br in case.branches], dtype=complex)
    bc = np.array([br.b_c for br in case.branches])
    rho = np.array([br.ratio for br in case.branches], dtype=complex)
    ytt = y + 0.5j * bc
    yff = ytt / np.abs(rho) ** 2
    yft = -y / np.conj(rho)
    ytf = -y / rho

    rows = np.arange(nl)
    Cf = np.zeros((nl, nb))
    Ct = np.zeros((nl, nb))
    Cf[rows, f] = 1.0
    Ct[rows, t] = 1.0
    Yf = np.zeros((nl, nb), dtype=complex)
    Yt = np.zeros((nl, nb), dtype=complex)
    Yf[rows, f] = yff
    Yf[rows, t] = yft
    Yt[rows, f] = ytf
    Yt[rows, t] = ytt

    bs = np.array([b.b_shunt for b in case.buses])
    Y = Cf.T @ Yf + Ct.T @ Yt + np.diag(1j * bs)
    return AdmittanceModel(Y, Yf, Yt, Cf, Ct, y, bs)


# --------------------------------------------------------------------------- DC model


@dataclass(frozen=True, eq=False)
class DcModel:
    A: np.ndarray          # N_l x N_b incidence, +1 at from, -1 at to
    d: np.ndarray          # 1/x per branch
    Bx: np.ndarray
    b_mm: np.ndarray       # total shunt susceptance per bus (b_s + sum b_c/2)
    ref: int

    @property
    def D(self) -> np.ndarray:
        return np.diag(self.d)

    @property
    def b_branch(self) -> np.ndarray:
        """Branch susceptances b_mn = -1/x_mn."""
        return -self.d

    @property
    def n_bus(self) -> int:
        return self.Bx.shape[0]

    @property
    def n_branch(self) -> int:
        return self.A.shape[0]

    def flows(self, theta) -> np.ndarray:
        """Active flow on each branch, from end to to end."""
        return self.d * (self.A @ np.asarray(theta, dtype=float))

    def reduced(self) -> np.ndarray:
        keep = np.arange(self.n_bus) != self.ref
        return self.Bx[np.ix_(keep, keep)]


def incidence(case: GridCase) -> np.ndarray:
    A = np.zeros((case.n_branch, case.n_bus))
    rows = np.arange(case.n_branch)
    A[rows, case.from_idx] = 1.0
    A[rows, case.to_idx] = -1.0
    return A


def build_dc(case: GridCase) -> DcModel:
    A = incidence(case)
    d = np.array([1.0 / br.x for br in case.branches])
    Bx = A.T @ (d[:, None] * A)
    # the element-wise assembly must agree with the factorised form
    direct = np.zeros((case.n_bus, case.n_bus))
    for (m, n), w in zip(zip(case.from_idx, case.to_idx), d):
        direct[m, m] += w
        direct[n, n] += w
        direct[m, n] -= w
        direct[n, m] -= w
    if not np.allclose(direct, Bx, rtol=0, atol=1e-12 * max(1.0, np.abs(Bx).max())):
        raise AssertionError("B_x != A^T D A")
    b_mm = np.array([b.b_shunt for b in case.buses], dtype=float)
    for k, br in enumerate(case.branches):
        b_mm[case.from_idx[k]] += br.b_c / 2
        b_mm[case.to_idx[k]] += br.b_c / 2
    return DcModel(A, d, Bx, b_mm, case.slack)


# --------------------------------------------------------------------------- state & injections


@dataclass(frozen=True, eq=False)
class ComplexState:
    vm: np.ndarray
    va: np.ndarray

    def __post_init__(self):
        vm = np.asarray(self.vm, dtype=float).copy()
        va = np.asarray(self.va, dtype=float).copy()
        if vm.shape != va.shape or vm.ndim != 1:
            raise DimensionError("vm and va must be 1-D arrays of equal length")
        vm.setflags(write=False)
        va.setflags(write=False)
        object.__setattr__(self, "vm", vm)
        object.__setattr__(self, "va", va)

    @classmethod
    def flat(cls, n: int) -> "ComplexState":
        return cls(np.ones(n), np.zeros(n))

    @classmethod
    def from_complex(cls, v) -> "ComplexState":
        v = np.asarray(v, dtype=complex)
        return cls(np.abs(v), np.angle(v))

    @classmethod
    def from_rect(cls, vr, vi) -> "ComplexState":
        return cls.from_complex(np.asarray(vr) + 1j * np.asarray(vi))

    @property
    def v(self) -> np.ndarray:
        return self.vm * np.exp(1j * self.va)

    @property
    def vr(self) -> np.ndarray:
        return self.vm * np.cos(self.va)

    @property
    def vi(self) -> np.ndarray:
        return self.vm * np.sin(self.va)

    def __len__(self):
        return len(self.vm)


def _check_dim(n: int, *arrays):
    for a in arrays:
        if len(a) != n:
            raise DimensionError(f"expected length {n}, got {len(a)}")


def ac_injections(model: AdmittanceModel, state: ComplexState, coords: str = "polar"):
    """Active and reactive injection at every bus."""
    _check_dim(model.n_bus, state.vm)
    G, B = model.G, model.B
    if coords == "polar":
        vm, va = state.vm, state.va
        dth = va[:, None] - va[None, :]
        vv = vm[:, None] * vm[None, :]
        P = np.sum(vv * (G * np.cos(dth) + B * np.sin(dth)), axis=1)
        Q = np.sum(vv * (G * np.sin(dth) - B * np.cos(dth)), axis=1)
        return P, Q
    if coords == "rect":
        vr, vi = state.vr, state.vi
        a = G @ vr - B @ vi
        b = G @ vi + B @ vr
        P = vr * a + vi * b
        Q = vi * a - vr * b
        return P, Q
    raise ValueError(f"coords must be 'polar' or 'rect', got {coords!r}")


class BranchFlows(NamedTuple):
    i_from: np.ndarray
    i_to: np.ndarray
    s_from: np.ndarray
    s_to: np.ndarray


def branch_flows(model: AdmittanceModel, state: ComplexState) -> BranchFlows:
    _check_dim(model.n_bus, state.vm)
    v = state.v
    i_f = model.Yf @ v
    i_t = model.Yt @ v
    return BranchFlows(i_f, i_t, (model.Cf @ v) * np.conj(i_f), (model.Ct @ v) * np.conj(i_t))


def shunt_power(model: AdmittanceModel, state: ComplexState) -> np.ndarray:
    """Complex power drawn by each bus shunt, V (j b_s V)^*."""
    return -1j * model.b_shunt * state.vm ** 2


def dc_injections(model: DcModel, theta, v):
    theta = np.asarray(theta, dtype=float)
    v = np.asarray(v, dtype=float)
    _check_dim(model.n_bus, theta, v)
    P = model.Bx @ theta
    Q = -model.b_mm + model.Bx @ v
    return P, Q
