"""Static state estimation, bad data, observability and stealth attacks.

Residuals are reported in whitened units, ``(z - h(x)) / sigma``, so that the
objective is always ``sum(r**2)``.  The linear routines (``dc_linear_se`` and
friends) take ``H`` and ``z`` already whitened unless ``sigma`` is passed.
"""
from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import chi2

from .errors import DimensionError, GridkitError, SingularSystemError, UnobservableError
from .netmodel import (AdmittanceModel, ComplexState, DcModel, GridCase, branch_flows,
                       build_admittance, build_dc, incidence)
from .powerflow import power_jacobian

KINDS = ("Vmag", "Pinj", "Qinj", "Pflow", "Qflow", "PhasorV", "PhasorIline")
BUS_KINDS = {"Vmag", "Pinj", "Qinj", "PhasorV"}
BRANCH_KINDS = {"Pflow", "Qflow", "PhasorIline"}
PHASOR_KINDS = {"PhasorV", "PhasorIline"}
DC_KINDS = ("Pinj", "Pflow")

RANK_CUTOFF = 1e-8


@dataclass(frozen=True)
class Measurement:
    """One scalar reading.

    ``bus`` is a bus id; ``branch`` is a branch position with ``end`` choosing
    which terminal the flow/current is metered at.  Phasor kinds are split into
    their real and imaginary ``part``.
    """

    kind: str
    value: float = 0.0
    sigma: float = 1.0
    bus: int | None = None
    branch: int | None = None
    end: str = "from"
    part: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise GridkitError(f"unknown measurement kind {self.kind!r}")
        if not self.sigma > 0:
            raise GridkitError(f"measurement sigma must be positive, got {self.sigma}")
        if self.kind in BUS_KINDS and (self.bus is None or self.branch is not None):
            raise GridkitError(f"{self.kind} needs a bus location")
        if self.kind in BRANCH_KINDS and (self.branch is None or self.bus is not None):
            raise GridkitError(f"{self.kind} needs a branch location")
        if self.end not in ("from", "to"):
            raise GridkitError(f"end must be 'from' or 'to', got {self.end!r}")
        if self.kind in PHASOR_KINDS:
            if self.part not in ("re", "im"):
                raise GridkitError(f"{self.kind} needs part 're' or 'im'")
        elif self.part is not None:
            raise GridkitError(f"{self.kind} does not take a part")

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.bus is not None:
            d["bus"] = self.bus
        else:
            d["branch"] = self.branch
            d["end"] = self.end
        if self.part is not None:
            d["part"] = self.part
        d["value"] = self.value
        d["sigma"] = self.sigma
        return d


_MEAS_KEYS = {"kind", "bus", "branch", "end", "part", "value", "sigma"}


@dataclass(frozen=True)
class MeasurementSet:
    measurements: tuple[Measurement, ...]

    def __len__(self):
        return len(self.measurements)

    def __iter__(self):
        return iter(self.measurements)

    def __getitem__(self, k):
        return self.measurements[k]

    @property
    def z(self) -> np.ndarray:
        return np.array([m.value for m in self.measurements], dtype=float)

    @property
    def sigma(self) -> np.ndarray:
        return np.array([m.sigma for m in self.measurements], dtype=float)

    def subset(self, keep) -> "MeasurementSet":
        return MeasurementSet(tuple(self.measurements[k] for k in keep))

    def with_values(self, z) -> "MeasurementSet":
        return MeasurementSet(tuple(replace(m, value=float(v)) for m, v in zip(self.measurements, z)))

    def validate(self, case: GridCase) -> None:
        ids = set(case.bus_ids)
        for k, m in enumerate(self.measurements):
            if m.bus is not None and m.bus not in ids:
                raise GridkitError(f"measurement {k}: unknown bus {m.bus}")
            if m.branch is not None and not 0 <= m.branch < case.n_branch:
                raise GridkitError(f"measurement {k}: branch {m.branch} out of range")

    def to_list(self) -> list:
        return [m.to_dict() for m in self.measurements]

    def dumps(self) -> str:
        return json.dumps(self.to_list(), indent=1)

    def dc_matrix(self, case: GridCase, ref: int | None = None):
        """Linear DC design matrix; see :func:`dc_measurement_matrix`."""
        return dc_measurement_matrix(case, self, ref=ref)


def parse_measurements(text: str) -> MeasurementSet:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise GridkitError(f"malformed JSON: {exc}") from None
    if not isinstance(doc, list):
        raise GridkitError("measurement file must hold a JSON list")
    out = []
    for k, rec in enumerate(doc):
        if not isinstance(rec, dict):
            raise GridkitError(f"measurement[{k}]: expected an object")
        unknown = set(rec) - _MEAS_KEYS
        if unknown:
            raise GridkitError(f"measurement[{k}]: unknown key(s) {sorted(unknown)}")
        try:
            out.append(Measurement(rec["kind"], float(rec.get("value", 0.0)),
                                   float(rec.get("sigma", 1.0)), rec.get("bus"), rec.get("branch"),
                                   rec.get("end", "from"), rec.get("part")))
        except KeyError as exc:
            raise GridkitError(f"measurement[{k}]: missing {exc}") from None
    return MeasurementSet(tuple(out))


@dataclass
class EstimationResult:
    state: object                 # ComplexState (AC) or angle vector (DC)
    residuals: np.ndarray         # whitened
    objective: float
    iterations: int = 1
    removed: tuple = ()
    converged: bool = True
    projector: np.ndarray | None = None

    def to_dict(self) -> dict:
        if isinstance(self.state, ComplexState):
            state = {"vm": self.state.vm.tolist(), "va": self.state.va.tolist()}
        else:
            state = {"theta": np.asarray(self.state).tolist()}
        return {"state": state, "residuals": self.residuals.tolist(), "objective": self.objective,
                "iterations": self.iterations, "removed": list(self.removed),
                "converged": self.converged}


# --------------------------------------------------------------------------- AC measurement model


def _branch_jacobian(Yf, C, state: ComplexState):
    v = state.v
    vnorm = v / state.vm
    i_f = Yf @ v
    vf = C @ v
    s = vf * np.conj(i_f)
    dS_dva = 1j * (np.conj(i_f)[:, None] * (C * v[None, :]) - vf[:, None] * np.conj(Yf * v[None, :]))
    dS_dvm = np.conj(i_f)[:, None] * (C * vnorm[None, :]) + vf[:, None] * np.conj(Yf * vnorm[None, :])
    dI_dva = Yf * (1j * v)[None, :]
    dI_dvm = Yf * vnorm[None, :]
    return s, dS_dva, dS_dvm, i_f, dI_dva, dI_dvm


def measurement_model(case: GridCase, meas: MeasurementSet, state: ComplexState,
                      model: AdmittanceModel | None = None):
    """Values ``h(state)`` and the Jacobian w.r.t. ``(va, vm)`` (all buses, 2*N_b columns)."""
    model = model or build_admittance(case)
    nb = case.n_bus
    idx = case.bus_index
    v = state.v
    s_bus = v * np.conj(model.Y @ v)
    dSb_dva, dSb_dvm = power_jacobian(model, state)
    ends = {"from": _branch_jacobian(model.Yf, model.Cf, state),
            "to": _branch_jacobian(model.Yt, model.Ct, state)}
    h = np.zeros(len(meas))
    J = np.zeros((len(meas), 2 * nb))
    for k, m in enumerate(meas):
        if m.kind == "Vmag":
            b = idx[m.bus]
            h[k] = state.vm[b]
            J[k, nb + b] = 1.0
        elif m.kind in ("Pinj", "Qinj"):
            b = idx[m.bus]
            take = np.real if m.kind == "Pinj" else np.imag
            h[k] = take(s_bus[b])
            J[k, :nb] = take(dSb_dva[b])
            J[k, nb:] = take(dSb_dvm[b])
        elif m.kind in ("Pflow", "Qflow"):
            s, dva, dvm = ends[m.end][:3]
            take = np.real if m.kind == "Pflow" else np.imag
            h[k] = take(s[m.branch])
            J[k, :nb] = take(dva[m.branch])
            J[k, nb:] = take(dvm[m.branch])
        elif m.kind == "PhasorV":
            b = idx[m.bus]
            take = np.real if m.part == "re" else np.imag
            h[k] = take(v[b])
            J[k, b] = take(1j * v[b])
            J[k, nb + b] = take(v[b] / state.vm[b])
        else:  # PhasorIline
            i_f, dva, dvm = ends[m.end][3:]
            take = np.real if m.part == "re" else np.imag
            h[k] = take(i_f[m.branch])
            J[k, :nb] = take(dva[m.branch])
            J[k, nb:] = take(dvm[m.branch])
    return h, J


def dc_measurement_matrix(case: GridCase, meas: MeasurementSet, ref: int | None = None,
                          dc: DcModel | None = None):
    """Rows of the linear model ``z = H theta`` for the active-power kinds.

    Returns ``(H, rows)`` where ``rows`` indexes the measurements that entered
    (only ``Pinj`` and ``Pflow`` do).  With ``ref`` given, that bus's column is
    dropped.
    """
    dc = dc or build_dc(case)
    idx = case.bus_index
    H, rows = [], []
    for k, m in enumerate(meas):
        if m.kind == "Pinj":
            H.append(dc.Bx[idx[m.bus]])
        elif m.kind == "Pflow":
            row = dc.d[m.branch] * dc.A[m.branch]
            H.append(row if m.end == "from" else -row)
        else:
            continue
        rows.append(k)
    H = np.array(H).reshape(len(rows), case.n_bus)
    if ref is not None:
        H = np.delete(H, ref, axis=1)
    return H, np.array(rows, dtype=int)


def simulate_measurements(case: GridCase, true_state, plan, sigma: float = 0.0,
                          seed: int | None = None, model: str = "ac",
                          weight_sigma: float | None = None) -> MeasurementSet:
    """Readings of ``plan`` taken on ``true_state`` plus ``sigma`` Gaussian noise.

    ``plan`` is an iterable of :class:`Measurement` templates (values ignored).
    ``model="dc"`` evaluates the linear DC model on ``true_state`` angles.  The
    recorded noise scale is ``weight_sigma``, else ``sigma``, else 1.
    """
    plan = MeasurementSet(tuple(plan))
    plan.validate(case)
    if model == "ac":
        state = true_state if isinstance(true_state, ComplexState) else \
            ComplexState(np.ones(case.n_bus), np.asarray(true_state))
        h, _ = measurement_model(case, plan, state)
        if len(h) != len(plan):
            raise GridkitError("internal: h length mismatch")
    elif model == "dc":
        theta = true_state.va if isinstance(true_state, ComplexState) else np.asarray(true_state)
        H, rows = dc_measurement_matrix(case, plan)
        if len(rows) != len(plan):
            raise GridkitError("dc simulation supports only Pinj and Pflow measurements")
        h = H @ theta
    else:
        raise ValueError("model must be 'ac' or 'dc'")
    rng = np.random.default_rng(seed)
    z = h + sigma * rng.standard_normal(len(h))
    rec = weight_sigma if weight_sigma is not None else (sigma if sigma > 0 else 1.0)
    return MeasurementSet(tuple(replace(m, value=float(v), sigma=rec) for m, v in zip(plan, z)))


# --------------------------------------------------------------------------- estimators


def _rank(M: np.ndarray) -> int:
    if M.size == 0:
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    return int(np.sum(s > RANK_CUTOFF * s[0])) if s[0] > 0 else 0


def wls_gauss_newton(case: GridCase, meas: MeasurementSet, init: ComplexState | None = None,
                     tol: float = 1e-10, max_iter: int = 30) -> EstimationResult:
    """Nonlinear weighted least squares by Gauss-Newton in polar coordinates.

    The slack angle is held at zero.  Non-convergence is reported through
    ``converged=False``; a rank-deficient linearisation raises
    :class:`UnobservableError`.
    """
    meas.validate(case)
    nb = case.n_bus
    n_state = 2 * nb - 1
    if len(meas) < n_state:
        raise UnobservableError(f"{len(meas)} measurements cannot determine {n_state} states")
    model = build_admittance(case)
    ref = case.slack
    cols = np.delete(np.arange(2 * nb), ref)
    state = init or ComplexState.flat(nb)
    vm, va = state.vm.copy(), state.va.copy()
    va[ref] = 0.0
    z, w = meas.z, 1.0 / meas.sigma
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        h, J = measurement_model(case, meas, ComplexState(vm, va), model)
        Jw = J[:, cols] * w[:, None]
        rw = (z - h) * w
        if it == 1 and _rank(Jw) < n_state:
            raise UnobservableError("linearised measurement model is rank deficient")
        dx = np.linalg.lstsq(Jw, rw, rcond=None)[0]
        full = np.zeros(2 * nb)
        full[cols] = dx
        va += full[:nb]
        vm += full[nb:]
        if np.abs(dx).max() < tol:
            converged = True
            break
        if not np.all(np.isfinite(dx)):
            break
    est = ComplexState(vm, va)
    h, _ = measurement_model(case, meas, est, model)
    r = (z - h) * w
    return EstimationResult(est, r, float(r @ r), it, (), converged)


def _whiten(H, z, sigma):
    H = np.atleast_2d(np.asarray(H, dtype=float))
    z = np.asarray(z, dtype=float).ravel()
    if H.shape[0] != z.size:
        raise DimensionError(f"H has {H.shape[0]} rows but z has {z.size} entries")
    if sigma is not None:
        w = 1.0 / np.broadcast_to(np.asarray(sigma, dtype=float), z.shape)
        H, z = H * w[:, None], z * w
    return H, z


def residual_projector(H: np.ndarray) -> np.ndarray:
    """``P = I - H (H'H)^{-1} H'`` computed from a thin QR factorisation."""
    m, n = H.shape
    if n == 0:
        return np.eye(m)
    Q1, _ = np.linalg.qr(H)
    return np.eye(m) - Q1 @ Q1.T


def dc_linear_se(H, z, sigma=None) -> EstimationResult:
    """Linear least-squares estimate for ``z = H theta + eps`` (H full column rank)."""
    H, z = _whiten(H, z, sigma)
    m, n = H.shape
    if m < n or _rank(H) < n:
        raise UnobservableError("H is not full column rank")
    theta = np.linalg.lstsq(H, z, rcond=None)[0]
    P = residual_projector(H)
    tol = 1e-10 * max(1.0, m)
    if not (np.allclose(P, P.T, atol=tol) and np.allclose(P @ P, P, atol=tol)):
        raise SingularSystemError("residual projector lost symmetry/idempotency")
    r = P @ z
    return EstimationResult(theta, r, float(r @ r), projector=P)


@dataclass
class BadDataReport:
    chi2_detected: bool
    chi2_statistic: float
    chi2_threshold: float
    removed: tuple
    result: EstimationResult
    halted: bool = False
    rounds: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"chi2_detected": self.chi2_detected, "chi2_statistic": self.chi2_statistic,
                "chi2_threshold": self.chi2_threshold, "removed": list(self.removed),
                "halted": self.halted, "rounds": self.rounds, "estimate": self.result.to_dict()}


def normalized_residuals(r: np.ndarray, P: np.ndarray) -> np.ndarray:
    """|r_i| / sqrt(P_ii); zero where the measurement is critical (P_ii ~ 0)."""
    d = np.clip(np.diag(P), 0.0, None)
    out = np.zeros_like(r)
    ok = d > 1e-10
    out[ok] = np.abs(r[ok]) / np.sqrt(d[ok])
    return out


def bad_data_scan(H, z, alpha: float = 0.01, lnrt_threshold: float = 3.0, sigma=None,
                  gate_with_chi2: bool = True) -> BadDataReport:
    """Chi-square detection and largest-normalized-residual removal, repeated.

    Each round re-estimates on the remaining rows.  With ``gate_with_chi2`` a
    round removes a measurement only while the chi-square test still fires.
    Ties between normalized residuals go to the lower index.  Critical
    measurements are never candidates; if a removal would leave ``H`` rank
    deficient the scan halts with ``halted=True``.
    """
    H, z = _whiten(H, z, sigma)
    m, n = H.shape
    active = list(range(m))
    removed: list[int] = []
    rounds = []
    first = None
    halted = False
    while True:
        res = dc_linear_se(H[active], z[active])
        dof = len(active) - n
        stat = res.objective
        thr = float(chi2.ppf(1 - alpha, dof)) if dof > 0 else np.inf
        detected = bool(dof > 0 and stat > thr)
        if first is None:
            first = (detected, stat, thr)
        nr = normalized_residuals(res.residuals, res.projector)
        k = int(np.argmax(nr)) if len(nr) else 0
        top = float(nr[k]) if len(nr) else 0.0
        ties = np.flatnonzero(nr >= top - 1e-9 * max(1.0, top))
        k = int(ties[0]) if len(ties) else k
        rounds.append({"chi2": stat, "threshold": thr, "detected": detected,
                       "max_normalized_residual": top, "index": active[k] if len(nr) else None})
        if dof <= 0 or top <= lnrt_threshold or (gate_with_chi2 and not detected):
            break
        trial = active[:k] + active[k + 1:]
        if _rank(H[trial]) < n:
            halted = True
            break
        removed.append(active[k])
        active = trial
    res.removed = tuple(removed)
    return BadDataReport(first[0], first[1], first[2], tuple(removed), res, halted, rounds)


def critical_measurements(H, sigma=None) -> list[int]:
    """Indices whose column of the residual projector vanishes."""
    H, _ = _whiten(H, np.zeros(np.atleast_2d(H).shape[0]), sigma)
    if _rank(H) < H.shape[1]:
        raise UnobservableError("H is not full column rank")
    P = residual_projector(H)
    return [i for i in range(H.shape[0]) if np.abs(P[:, i]).max() < 1e-9]


def fuse_prior(H, z, prior_mean, prior_cov, sigma=None) -> EstimationResult:
    """MAP estimate of ``z = H theta + eps`` under ``theta ~ N(prior_mean, prior_cov)``."""
    mu = np.asarray(prior_mean, dtype=float).ravel()
    n = mu.size
    S = np.atleast_2d(np.asarray(prior_cov, dtype=float))
    if S.shape != (n, n):
        raise DimensionError(f"prior covariance must be {n}x{n}")
    if not np.allclose(S, S.T, rtol=1e-12, atol=0):
        raise GridkitError("prior covariance is not symmetric")
    try:
        L = np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        raise GridkitError("prior covariance is not positive definite") from None
    z = np.asarray(z, dtype=float).ravel()
    H = np.asarray(H, dtype=float).reshape(z.size, n)
    H, z = _whiten(H, z, sigma)
    Linv = np.linalg.solve(L, np.eye(n))
    A = np.vstack([H, Linv])
    b = np.concatenate([z, Linv @ mu])
    theta = np.linalg.lstsq(A, b, rcond=None)[0]
    r = z - H @ theta
    return EstimationResult(theta, r, float(r @ r))


@dataclass(frozen=True)
class AttackVector:
    c: np.ndarray
    a: np.ndarray

    @property
    def support(self) -> int:
        return int(np.count_nonzero(np.abs(self.a) > 1e-12 * max(1.0, np.abs(self.a).max())))


def build_attack(H, c) -> AttackVector:
    """Stealth attack ``a = H c``: shifts the LS estimate by ``c`` leaving residuals intact."""
    H = np.atleast_2d(np.asarray(H, dtype=float))
    c = np.asarray(c, dtype=float).ravel()
    if c.size != H.shape[1]:
        raise DimensionError(f"c must have length {H.shape[1]}")
    if not np.any(c):
        raise GridkitError("attack coefficient vector c must be nonzero")
    return AttackVector(c, H @ c)


# --------------------------------------------------------------------------- observability


@dataclass
class ObservabilityResult:
    observable: bool
    islands: list                 # lists of bus positions, sorted
    determined_lines: list = field(default_factory=list)
    forest: list = field(default_factory=list)
    dropped_injections: list = field(default_factory=list)

    def partition(self) -> frozenset:
        return frozenset(frozenset(isl) for isl in self.islands)

    def to_dict(self, case: GridCase | None = None) -> dict:
        ids = case.bus_ids if case is not None else None
        isl = [[ids[b] for b in i] for i in self.islands] if ids else self.islands
        return {"observable": self.observable, "islands": isl,
                "determined_lines": self.determined_lines, "forest": self.forest,
                "dropped_injections": self.dropped_injections}


def _islands(n_bus: int, f, t, lines) -> list:
    parent = list(range(n_bus))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for l in lines:
        ra, rb = find(int(f[l])), find(int(t[l]))
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
    groups: dict[int, list] = {}
    for b in range(n_bus):
        groups.setdefault(find(b), []).append(b)
    return sorted(groups.values())


def observability_numerical(H, A) -> ObservabilityResult:
    """Islands from the null space of ``H`` (all bus angles as unknowns).

    A line is determined when its incidence row annihilates ``null(H)``;
    islands are the connected components of determined lines.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    nl, nb = A.shape
    H = np.asarray(H, dtype=float).reshape(-1, nb)
    if H.shape[0] == 0:
        N = np.eye(nb)
    else:
        _, s, Vt = np.linalg.svd(H)
        r = int(np.sum(s > RANK_CUTOFF * s[0])) if s[0] > 0 else 0
        N = Vt[r:].T
    proj = np.abs(A @ N).max(axis=1) if N.shape[1] else np.zeros(nl)
    determined = [l for l in range(nl) if proj[l] < 1e-8]
    f = np.argmax(A > 0, axis=1)
    t = np.argmax(A < 0, axis=1)
    islands = _islands(nb, f, t, determined)
    return ObservabilityResult(len(islands) == 1, islands, determined)


def _has_matching(branches, cover) -> bool:
    """Can every branch be assigned a distinct measurement from ``cover[branch]``?"""
    owner: dict = {}

    def augment(l, seen):
        for j in cover[l]:
            if j in seen:
                continue
            seen.add(j)
            if j not in owner or augment(owner[j], seen):
                owner[j] = l
                return True
        return False

    return all(augment(l, set()) for l in branches)


def _matching(branches, cover) -> dict:
    owner: dict = {}

    def augment(l, seen):
        for j in cover[l]:
            if j in seen:
                continue
            seen.add(j)
            if j not in owner or augment(owner[j], seen):
                owner[j] = l
                return True
        return False

    for l in branches:
        augment(l, set())
    return {l: j for j, l in owner.items()}


def _acyclic(branches, f, t, n_bus) -> bool:
    parent = list(range(n_bus))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for l in branches:
        ra, rb = find(f[l]), find(t[l])
        if ra == rb:
            return False
        parent[ra] = rb
    return True


def max_measured_forest(n_bus: int, f, t, cover) -> list:
    """Largest forest whose branches get distinct measurements (matroid intersection).

    Ground set: branches.  One matroid is the graphic matroid (acyclic sets),
    the other the transversal matroid of the branch/measurement eligibility.
    """
    nl = len(f)
    current: set = set()

    def ind1(S):
        return _acyclic(sorted(S), f, t, n_bus)

    def ind2(S):
        return _has_matching(sorted(S), cover)

    while True:
        outside = [x for x in range(nl) if x not in current and cover[x]]
        inside = sorted(current)
        sources = {x for x in outside if ind1(current | {x})}
        sinks = {x for x in outside if ind2(current | {x})}
        if not sources or not sinks:
            break
        adj: dict = {v: [] for v in inside + outside}
        for y in inside:
            for x in outside:
                swapped = (current - {y}) | {x}
                if ind1(swapped):
                    adj[y].append(x)
                if ind2(swapped):
                    adj[x].append(y)
        prev = {s: None for s in sorted(sources)}
        queue = deque(sorted(sources))
        end = None
        while queue:
            v = queue.popleft()
            if v in sinks:
                end = v
                break
            for w in adj[v]:
                if w not in prev:
                    prev[w] = v
                    queue.append(w)
        if end is None:
            break
        path = []
        while end is not None:
            path.append(end)
            end = prev[end]
        current ^= set(path)
    return sorted(current)


def observability_topological(case: GridCase, meas: MeasurementSet) -> ObservabilityResult:
    """Islands from a maximal forest of metered branches.

    Eligible branch/measurement pairs: a flow meter covers its own branch, an
    injection meter covers any branch incident to its bus; each measurement
    covers at most one forest branch.  Injections at buses touching a branch
    that joins two different forest components cannot be attributed and are
    dropped, after which the forest is rebuilt, until nothing changes.
    """
    meas.validate(case)
    f, t = case.from_idx, case.to_idx
    idx = case.bus_index
    nb, nl = case.n_bus, case.n_branch
    incident = [[l for l in range(nl) if f[l] == b or t[l] == b] for b in range(nb)]
    active = [k for k, m in enumerate(meas) if m.kind in DC_KINDS]
    dropped: list = []
    while True:
        cover = {l: [] for l in range(nl)}
        for k in active:
            m = meas[k]
            if m.kind == "Pflow":
                cover[m.branch].append(k)
            else:
                for l in incident[idx[m.bus]]:
                    cover[l].append(k)
        forest = max_measured_forest(nb, f, t, cover)
        islands = _islands(nb, f, t, forest)
        comp = np.empty(nb, dtype=int)
        for c, isl in enumerate(islands):
            comp[isl] = c
        boundary = [k for k in active if meas[k].kind == "Pinj"
                    and any(comp[f[l]] != comp[t[l]] for l in incident[idx[meas[k].bus]])]
        if not boundary:
            break
        dropped.extend(boundary)
        active = [k for k in active if k not in boundary]
    return ObservabilityResult(len(islands) == 1, islands, forest=forest,
                               dropped_injections=sorted(dropped))


def observability_check(case: GridCase, meas: MeasurementSet) -> dict:
    """Run both tests on the active-power subproblem and compare partitions."""
    H, _ = dc_measurement_matrix(case, meas)
    num = observability_numerical(H, incidence(case))
    top = observability_topological(case, meas)
    return {"numerical": num, "topological": top, "agree": num.partition() == top.partition()}


def reactive_observability(case: GridCase, meas: MeasurementSet) -> dict:
    """Q-V analogue: reactive meters mapped onto the same engine.

    An island is reactive-observable only if it also holds a voltage magnitude
    reading (the reactive counterpart of the reference angle).
    """
    mapped = []
    for m in meas:
        if m.kind == "Qinj":
            mapped.append(replace(m, kind="Pinj"))
        elif m.kind == "Qflow":
            mapped.append(replace(m, kind="Pflow"))
    res = observability_numerical(dc_measurement_matrix(case, MeasurementSet(tuple(mapped)))[0],
                                  incidence(case))
    idx = case.bus_index
    vbuses = {idx[m.bus] for m in meas if m.kind == "Vmag"}
    referenced = [bool(vbuses & set(isl)) for isl in res.islands]
    return {"result": res, "island_has_voltage": referenced,
            "observable": res.observable and all(referenced)}
