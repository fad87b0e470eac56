"""Pure-Python reference versions of the compiled kernels.

These define the semantics; ``_kernels.pyx`` must return identical results.
"""
from __future__ import annotations

import numpy as np

INF = float("inf")


def box_sum_solve(c, w, lo, hi, total):
    """Solve ``sum(clip(c - nu*w, lo, hi)) = total`` for ``nu`` (``w > 0``).

    Returns ``(x, nu)``.  The map nu -> sum is nonincreasing and piecewise
    linear, so walking its sorted breakpoints gives the exact root.  When
    ``total`` equals ``sum(hi)`` or ``sum(lo)`` the extreme breakpoint is used.
    """
    c = np.asarray(c, dtype=float)
    w = np.asarray(w, dtype=float)
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    n = c.shape[0]
    s_lo = float(lo.sum())
    s_hi = float(hi.sum())
    tol = 1e-12 * max(1.0, abs(s_lo), abs(s_hi))
    if total < s_lo - tol or total > s_hi + tol:
        raise ValueError(f"total {total} outside [{s_lo}, {s_hi}]")
    if n == 0:
        return np.zeros(0), 0.0
    # event list: (nu, item, kind) kind 0 = leaves upper bound, 1 = hits lower bound
    events = []
    for i in range(n):
        events.append(((c[i] - hi[i]) / w[i], i, 0))
        events.append(((c[i] - lo[i]) / w[i], i, 1))
    events.sort()
    s = s_hi
    slope = 0.0
    nu_prev = events[0][0]
    nu = nu_prev
    if total >= s_hi:
        nu = nu_prev
    else:
        found = False
        for k in range(len(events)):
            nu_k, i, kind = events[k]
            s_k = s + slope * (nu_k - nu_prev)
            if s_k <= total:
                nu = nu_prev + (total - s) / slope if slope != 0.0 else nu_k
                found = True
                break
            s, nu_prev = s_k, nu_k
            slope += -w[i] if kind == 0 else w[i]
        if not found:
            nu = nu_prev
    x = np.minimum(np.maximum(c - nu * w, lo), hi)
    return x, float(nu)


def uc_dp(stage, compat, init_compat, startup, t_up, t_down, init_on):
    """Per-unit commitment DP.

    ``stage[t, j]`` is the (already minimised) cost of running in power cell
    ``j`` at period ``t``; ``compat[i, j]`` allows cell ``i`` to be followed by
    cell ``j`` while on; ``init_compat[j]`` does the same for the first period
    when the unit starts on.  Counters are clipped at ``t_up``/``t_down`` and
    the initial state counts as having satisfied them.

    Returns ``(u, cell, value)`` with ``cell[t] = -1`` when off.
    """
    stage = np.asarray(stage, dtype=float)
    compat = np.asarray(compat, dtype=np.uint8)
    init_compat = np.asarray(init_compat, dtype=np.uint8)
    T, K = stage.shape
    n_off = t_down
    n_on = t_up * K
    n_state = n_off + n_on
    # state index: off counter k (1..t_down) -> k-1; on (k, j) -> n_off + (k-1)*K + j
    cost = np.full(n_state, INF)
    back = np.full((T, n_state), -1, dtype=np.int64)
    prev = np.full(n_state, INF)
    START = -2  # marker for the virtual initial state

    for t in range(T):
        cost[:] = INF
        for s in range(n_state):
            # enumerate predecessors of s
            if s < n_off:
                k = s + 1
                if t == 0:
                    if not init_on and k == t_down:
                        cost[s] = 0.0
                        back[t, s] = START
                    elif init_on and k == 1:
                        cost[s] = 0.0
                        back[t, s] = START
                    continue
                if k == 1:
                    # just turned off: from any on-state with saturated up counter
                    base = n_off + (t_up - 1) * K
                    for j in range(K):
                        v = prev[base + j]
                        if v < cost[s]:
                            cost[s] = v
                            back[t, s] = base + j
                else:
                    v = prev[k - 2]
                    if v < cost[s]:
                        cost[s] = v
                        back[t, s] = k - 2
                if k == t_down:
                    v = prev[s]
                    if v < cost[s]:
                        cost[s] = v
                        back[t, s] = s
            else:
                r = s - n_off
                k = r // K + 1
                j = r % K
                g = stage[t, j]
                if t == 0:
                    if init_on and k == t_up and init_compat[j]:
                        cost[s] = g
                        back[t, s] = START
                    elif not init_on and k == 1:
                        cost[s] = g + startup
                        back[t, s] = START
                    continue
                if k == 1:
                    v = prev[t_down - 1] + startup + g
                    if v < cost[s]:
                        cost[s] = v
                        back[t, s] = t_down - 1
                ks = ([k - 1] if k > 1 else []) + ([k] if k == t_up else [])
                for kp in ks:
                    base = n_off + (kp - 1) * K
                    for i in range(K):
                        if compat[i, j]:
                            v = prev[base + i] + g
                            if v < cost[s]:
                                cost[s] = v
                                back[t, s] = base + i
        prev[:] = cost

    best = int(np.argmin(prev))
    value = float(prev[best])
    u = np.zeros(T, dtype=np.int64)
    cell = np.full(T, -1, dtype=np.int64)
    s = best
    for t in range(T - 1, -1, -1):
        if s >= n_off:
            u[t] = 1
            cell[t] = (s - n_off) % K
        s = back[t, s]
    return u, cell, value
