"""DC and Newton-Raphson AC power flow."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, DimensionError, GridkitError, SingularSystemError
from .netmodel import AdmittanceModel, ComplexState, DcModel, GridCase, ac_injections, build_admittance


def solve_dc(model: DcModel, p, ref: int | None = None, balance_tol: float = 1e-9) -> np.ndarray:
    """Angles solving ``B_x theta = p`` with ``theta[ref] = 0``.

    ``ref`` is a bus position; it defaults to the model's slack bus.
    """
    p = np.asarray(p, dtype=float)
    if p.shape != (model.n_bus,):
        raise DimensionError(f"expected {model.n_bus} injections, got shape {p.shape}")
    if abs(p.sum()) > balance_tol * max(1.0, np.abs(p).max()):
        raise GridkitError(f"unbalanced injections: sum(p) = {p.sum():.3e}")
    ref = model.ref if ref is None else ref
    keep = np.arange(model.n_bus) != ref
    Br = model.Bx[np.ix_(keep, keep)]
    try:
        cond = np.linalg.cond(Br)
    except np.linalg.LinAlgError:
        cond = np.inf
    if not np.isfinite(cond) or cond > 1e14:
        raise SingularSystemError("reduced B_x is singular: network is disconnected")
    theta = np.zeros(model.n_bus)
    theta[keep] = np.linalg.solve(Br, p[keep])
    return theta


@dataclass(frozen=True)
class PfSpec:
    """Fixed quantities per bus; entries that a bus type leaves free are ignored."""

    types: tuple[str, ...]
    p: np.ndarray
    q: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        n = len(self.types)
        for name in ("p", "q", "v"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (n,):
                raise DimensionError(f"PfSpec.{name} must have length {n}")
            object.__setattr__(self, name, arr)
        if sum(t == "slack" for t in self.types) != 1:
            raise GridkitError("power flow spec needs exactly one slack bus")
        bad = [t for t in self.types if t not in ("slack", "PV", "PQ")]
        if bad:
            raise GridkitError(f"unknown bus type(s) {bad}")

    @property
    def slack(self) -> int:
        return self.types.index("slack")

    @property
    def pv(self) -> np.ndarray:
        return np.array([k for k, t in enumerate(self.types) if t == "PV"], dtype=int)

    @property
    def pq(self) -> np.ndarray:
        return np.array([k for k, t in enumerate(self.types) if t == "PQ"], dtype=int)


def spec_from_case(case: GridCase, gen_p=None, v_set=None) -> PfSpec:
    """Build a :class:`PfSpec` from a case.

    ``gen_p`` maps generator position -> active output (default 0); ``v_set``
    maps bus id -> voltage set-point for slack/PV buses (default 1.0).
    Net injection is generation minus load.
    """
    pl, ql = case.bus_load()
    pg = np.zeros(case.n_bus)
    gidx = case.gen_bus_idx()
    if gen_p is not None:
        gen_p = dict(gen_p) if not isinstance(gen_p, dict) else gen_p
        for k, val in gen_p.items():
            pg[gidx[k]] += val
    v = np.ones(case.n_bus)
    if v_set:
        idx = case.bus_index
        for bus_id, val in v_set.items():
            v[idx[int(bus_id)]] = val
    types = tuple(b.type for b in case.buses)
    return PfSpec(types, pg - pl, -ql, v)


def operating_spec(case: GridCase, operating: dict) -> PfSpec:
    """Spec from an operating-point document ``{"generators": [{"bus","p","v"}]}``."""
    gen_p = {}
    v_set = {}
    gens = list(case.generators)
    used = set()
    for rec in operating["generators"]:
        k = next(i for i, g in enumerate(gens) if g.bus == rec["bus"] and i not in used)
        used.add(k)
        gen_p[k] = rec["p"]
        if "v" in rec:
            v_set[rec["bus"]] = rec["v"]
    return spec_from_case(case, gen_p, v_set)


@dataclass(frozen=True)
class PfSolution:
    state: ComplexState
    iterations: int
    mismatch: float
    converged: bool
    p: np.ndarray
    q: np.ndarray
    q_violations: tuple = ()


def power_jacobian(model: AdmittanceModel, state: ComplexState):
    """dS/dtheta and dS/d|V| for the bus injections (complex, N_b x N_b)."""
    v = state.v
    ibus = model.Y @ v
    vnorm = v / state.vm
    dS_dva = 1j * np.diag(v) @ np.conj(np.diag(ibus) - model.Y * v[None, :])
    dS_dvm = np.diag(v) @ np.conj(model.Y * vnorm[None, :]) + np.diag(np.conj(ibus) * vnorm)
    return dS_dva, dS_dvm


def solve_ac(case: GridCase, spec: PfSpec, tol: float = 1e-8, max_iter: int = 20,
             init: ComplexState | None = None) -> PfSolution:
    """Newton-Raphson on the polar mismatch equations from a flat start.

    Returns an unconverged solution (``converged=False``) when ``max_iter`` is
    exhausted; raises :class:`SingularSystemError` on a singular Jacobian.
    """
    model = build_admittance(case)
    n = case.n_bus
    if len(spec.types) != n:
        raise DimensionError("spec and case disagree on the number of buses")
    pv, pq = spec.pv, spec.pq
    pvpq = np.sort(np.concatenate([pv, pq]))
    vm = np.ones(n) if init is None else init.vm.copy()
    va = np.zeros(n) if init is None else init.va.copy()
    fixed_v = np.setdiff1d(np.arange(n), pq)
    vm[fixed_v] = spec.v[fixed_v]
    va[spec.slack] = 0.0

    def mismatch(vm, va):
        P, Q = ac_injections(model, ComplexState(vm, va))
        return np.concatenate([P[pvpq] - spec.p[pvpq], Q[pq] - spec.q[pq]])

    f = mismatch(vm, va)
    it = 0
    norm = np.abs(f).max() if f.size else 0.0
    while norm > tol and it < max_iter:
        dS_dva, dS_dvm = power_jacobian(model, ComplexState(vm, va))
        J = np.block([
            [dS_dva.real[np.ix_(pvpq, pvpq)], dS_dvm.real[np.ix_(pvpq, pq)]],
            [dS_dva.imag[np.ix_(pq, pvpq)], dS_dvm.imag[np.ix_(pq, pq)]],
        ])
        try:
            dx = np.linalg.solve(J, -f)
        except np.linalg.LinAlgError:
            raise SingularSystemError("power flow Jacobian is singular") from None
        va[pvpq] += dx[: len(pvpq)]
        vm[pq] += dx[len(pvpq):]
        f = mismatch(vm, va)
        norm = np.abs(f).max()
        it += 1
        if not np.isfinite(norm):
            break

    state = ComplexState(vm, va)
    P, Q = ac_injections(model, state)
    converged = bool(norm <= tol)
    return PfSolution(state, it, float(norm), converged, P, Q,
                      _q_limit_report(case, Q) if converged else ())


def _q_limit_report(case: GridCase, Q: np.ndarray) -> tuple:
    """Generator buses whose required reactive output lies outside the summed limits."""
    _, ql = case.bus_load()
    out = []
    gidx = case.gen_bus_idx()
    for m in sorted(set(gidx.tolist())):
        gens = [g for g, k in zip(case.generators, gidx) if k == m]
        qg = Q[m] + ql[m]
        qmin = sum(g.q_min for g in gens)
        qmax = sum(g.q_max for g in gens)
        if qg < qmin - 1e-9 or qg > qmax + 1e-9:
            out.append({"bus": case.buses[m].id, "q_gen": float(qg), "q_min": float(qmin),
                        "q_max": float(qmax)})
    return tuple(out)


def require_converged(sol: PfSolution) -> PfSolution:
    if not sol.converged:
        raise ConvergenceError(f"power flow did not converge (mismatch {sol.mismatch:.3e})")
    return sol
