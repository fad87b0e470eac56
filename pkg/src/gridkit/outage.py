"""Line-outage identification from pre/post-event bus angles.

With injections unchanged, removing lines E from the network gives

    B_x (theta_post - theta_pre) = sum_{l in E} m_l a_l,   m_l = a_l' theta_post / x_l

so the angle difference is a sparse combination of the columns of
``X A'`` (``X`` the reduced inverse of ``B_x`` with the reference angle pinned
to zero).  Only rows of internal buses are observed.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .errors import GridkitError, SingularSystemError
from .netmodel import DcModel, GridCase, build_dc
from .powerflow import solve_dc


def reduced_inverse(dc: DcModel, ref: int | None = None) -> np.ndarray:
    """``X`` with ``theta = X p`` for balanced ``p`` and ``theta[ref] = 0``."""
    ref = dc.ref if ref is None else ref
    n = dc.n_bus
    keep = np.arange(n) != ref
    Br = dc.Bx[np.ix_(keep, keep)]
    if np.linalg.matrix_rank(Br) < n - 1:
        raise SingularSystemError("pre-event network is disconnected")
    X = np.zeros((n, n))
    X[np.ix_(keep, keep)] = np.linalg.inv(Br)
    return X


@dataclass(frozen=True, eq=False)
class OutageModel:
    dc: DcModel
    internal: np.ndarray          # bus positions, sorted
    observation: np.ndarray       # theta_post - theta_pre on internal buses
    regressors: np.ndarray        # rows of X A' on internal buses, one column per line

    @property
    def n_lines(self) -> int:
        return self.regressors.shape[1]


@dataclass(frozen=True, eq=False)
class OutageEstimate:
    lines: tuple
    m: np.ndarray
    residual: float

    def to_dict(self) -> dict:
        return {"lines": list(self.lines), "m": self.m.tolist(), "residual": self.residual}


def build_outage_model(dc: DcModel, theta_pre, theta_post, internal_buses=None) -> OutageModel:
    """Regression ``y = M m + eta`` restricted to the internal buses (positions)."""
    theta_pre = np.asarray(theta_pre, dtype=float)
    theta_post = np.asarray(theta_post, dtype=float)
    n = dc.n_bus
    if theta_pre.shape != (n,) or theta_post.shape != (n,):
        raise GridkitError(f"angle vectors must have length {n}")
    internal = np.arange(n) if internal_buses is None else np.unique(np.asarray(internal_buses, dtype=int))
    if internal.size == 0:
        raise GridkitError("internal bus set is empty")
    if internal.min() < 0 or internal.max() >= n:
        raise GridkitError("internal bus index out of range")
    if dc.ref not in internal:
        raise GridkitError("reference bus must be internal")
    X = reduced_inverse(dc)
    M = (X @ dc.A.T)[internal]
    y = (theta_post - theta_pre)[internal]
    return OutageModel(dc, internal, y, M)


def simulate_outage(case: GridCase, p, lines) -> tuple[np.ndarray, np.ndarray]:
    """Pre- and post-event DC angles for injections ``p`` with ``lines`` removed."""
    dc = build_dc(case)
    pre = solve_dc(dc, p)
    out = set(int(l) for l in lines)
    post_case = case.with_branches([k for k in range(case.n_branch) if k not in out])
    if post_case.n_components() > 1:
        raise SingularSystemError(f"removing lines {sorted(lines)} disconnects the network")
    post = solve_dc(build_dc(post_case), p)
    return pre, post


def _fit(M, y, support):
    m = np.zeros(M.shape[1])
    if support:
        cols = list(support)
        coef = np.linalg.lstsq(M[:, cols], y, rcond=None)[0]
        m[cols] = coef
    r = y - M @ m
    return m, float(np.linalg.norm(r))


def identify_exhaustive(model: OutageModel, k: int) -> OutageEstimate:
    """Best least-squares fit over every support of size ``k`` (1 or 2)."""
    if k not in (1, 2):
        raise GridkitError("exhaustive search is limited to k in {1, 2}")
    M, y = model.regressors, model.observation
    scale = max(1.0, float(np.linalg.norm(y)))
    best = None
    for support in combinations(range(M.shape[1]), k):
        m, res = _fit(M, y, support)
        if best is None or res < best[2] - 1e-12 * scale:
            best = (support, m, res)
    return OutageEstimate(*best)


def _whitener(model: OutageModel):
    """Inverse of the internal block of ``X`` (reference row dropped).

    This is the Kron-reduced Laplacian of the internal buses.  It maps the
    column of a line with both ends internal back to that line's incidence
    row, which makes the columns far less coherent than in the angle domain.
    """
    X = reduced_inverse(model.dc)
    keep = model.internal != model.dc.ref
    idx = model.internal[keep]
    if idx.size == 0:
        return keep, np.zeros((0, 0))
    return keep, np.linalg.inv(X[np.ix_(idx, idx)])


def _exchange(M, y, support, tol):
    """Single-swap local search on the LS residual.

    A swap is taken when it lowers the residual by more than ``tol``, or keeps
    it within ``tol`` while giving a lexicographically smaller support (the
    same tie rule as the exhaustive search).
    """
    S = sorted(support)
    _, cur = _fit(M, y, S)
    changed = True
    while changed:
        changed = False
        for i in range(len(S)):
            for j in range(M.shape[1]):
                if j in S:
                    continue
                T = sorted(S[:i] + S[i + 1:] + [j])
                _, res = _fit(M, y, T)
                if res < cur - tol or (res <= cur + tol and T < S):
                    S, cur, changed = T, res, True
                    break
            if changed:
                break
    return S


def identify_omp(model: OutageModel, k: int | None = None, threshold: float | None = None,
                 whiten: bool = True, refine: bool = True) -> OutageEstimate:
    """Orthogonal matching pursuit with normalised columns and a LS refit.

    Stops after ``k`` selections or once the residual norm drops to
    ``threshold``; at least one of the two must be given.  With ``whiten`` the
    greedy selection runs after premultiplying by the Kron-reduced Laplacian
    of the internal buses; the final fit is always the angle-domain LS fit.
    ``refine`` finishes with a single-exchange pass.
    """
    if k is None and threshold is None:
        raise GridkitError("give k or a residual threshold")
    M, y = model.regressors, model.observation
    if whiten:
        keep, W = _whitener(model)
        G, z = W @ M[keep], W @ y[keep]
    else:
        G, z = M, y
    norms = np.linalg.norm(G, axis=0)
    usable = norms > 1e-12 * max(1.0, norms.max(initial=0.0))
    Gn = np.zeros_like(G)
    Gn[:, usable] = G[:, usable] / norms[usable]
    limit = M.shape[1] if k is None else k
    support: list[int] = []
    r = z.copy()
    _, res = _fit(M, y, support)
    while len(support) < limit and (threshold is None or res > threshold):
        score = np.abs(Gn.T @ r)
        score[support] = -1.0
        score[~usable] = -1.0
        j = int(np.argmax(score))
        if score[j] <= 0:
            break
        support.append(j)
        coef = np.linalg.lstsq(G[:, support], z, rcond=None)[0]
        r = z - G[:, support] @ coef
        _, res = _fit(M, y, support)
    if refine and support:
        support = _exchange(M, y, support, 1e-12 * max(1.0, float(np.linalg.norm(y))))
    m, res = _fit(M, y, support)
    return OutageEstimate(tuple(sorted(support)), m, res)


def add_noise(model: OutageModel, snr_db: float, rng) -> OutageModel:
    """Copy of ``model`` with white noise at the given SNR on the observation."""
    y = model.observation
    sigma = np.sqrt(np.mean(y ** 2)) * 10 ** (-snr_db / 20)
    noisy = y + sigma * rng.standard_normal(y.shape)
    return OutageModel(model.dc, model.internal, noisy, model.regressors)
