# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the hot loops in ``_kernels_py``; same semantics."""
import numpy as np
cimport numpy as cnp

cnp.import_array()

cdef double INF = float("inf")


def box_sum_solve(c, w, lo, hi, double total):
    cdef cnp.ndarray[double, ndim=1] cc = np.ascontiguousarray(c, dtype=float)
    cdef cnp.ndarray[double, ndim=1] ww = np.ascontiguousarray(w, dtype=float)
    cdef cnp.ndarray[double, ndim=1] ll = np.ascontiguousarray(lo, dtype=float)
    cdef cnp.ndarray[double, ndim=1] hh = np.ascontiguousarray(hi, dtype=float)
    cdef Py_ssize_t n = cc.shape[0], i, k, m
    cdef double s_lo = ll.sum() if n else 0.0
    cdef double s_hi = hh.sum() if n else 0.0
    cdef double tol = 1e-12 * max(1.0, abs(s_lo), abs(s_hi))
    if total < s_lo - tol or total > s_hi + tol:
        raise ValueError(f"total {total} outside [{s_lo}, {s_hi}]")
    if n == 0:
        return np.zeros(0), 0.0
    cdef cnp.ndarray[double, ndim=1] nus = np.empty(2 * n)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] items = np.empty(2 * n, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] kinds = np.empty(2 * n, dtype=np.int64)
    for i in range(n):
        nus[2 * i] = (cc[i] - hh[i]) / ww[i]
        items[2 * i] = i
        kinds[2 * i] = 0
        nus[2 * i + 1] = (cc[i] - ll[i]) / ww[i]
        items[2 * i + 1] = i
        kinds[2 * i + 1] = 1
    cdef cnp.ndarray[cnp.int64_t, ndim=1] order = np.lexsort((kinds, items, nus)).astype(np.int64)
    cdef double s = s_hi, slope = 0.0
    cdef double nu_prev = nus[order[0]]
    cdef double nu = nu_prev, nu_k, s_k
    cdef bint found = False
    if total < s_hi:
        for k in range(2 * n):
            m = order[k]
            nu_k = nus[m]
            s_k = s + slope * (nu_k - nu_prev)
            if s_k <= total:
                nu = nu_prev + (total - s) / slope if slope != 0.0 else nu_k
                found = True
                break
            s = s_k
            nu_prev = nu_k
            if kinds[m] == 0:
                slope -= ww[items[m]]
            else:
                slope += ww[items[m]]
        if not found:
            nu = nu_prev
    x = np.minimum(np.maximum(cc - nu * ww, ll), hh)
    return x, float(nu)


def uc_dp(stage, compat, init_compat, double startup, int t_up, int t_down, bint init_on):
    cdef cnp.ndarray[double, ndim=2] st = np.ascontiguousarray(stage, dtype=float)
    cdef cnp.ndarray[cnp.uint8_t, ndim=2] cp = np.ascontiguousarray(compat, dtype=np.uint8)
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] ic = np.ascontiguousarray(init_compat, dtype=np.uint8)
    cdef Py_ssize_t T = st.shape[0], K = st.shape[1]
    cdef Py_ssize_t n_off = t_down, n_state = t_down + t_up * K
    cdef cnp.ndarray[double, ndim=1] cost = np.full(n_state, INF)
    cdef cnp.ndarray[double, ndim=1] prev = np.full(n_state, INF)
    cdef cnp.ndarray[cnp.int64_t, ndim=2] back = np.full((T, n_state), -1, dtype=np.int64)
    cdef Py_ssize_t t, s, k, j, i, r, base, kp, kp_lo, kp_hi, p
    cdef double g, v
    cdef cnp.int64_t START = -2

    for t in range(T):
        for s in range(n_state):
            cost[s] = INF
        for s in range(n_state):
            if s < n_off:
                k = s + 1
                if t == 0:
                    if (not init_on and k == t_down) or (init_on and k == 1):
                        cost[s] = 0.0
                        back[t, s] = START
                    continue
                if k == 1:
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
                g = st[t, j]
                if t == 0:
                    if init_on and k == t_up and ic[j]:
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
                kp_lo = k - 1 if k > 1 else k
                kp_hi = k if k == t_up else k - 1
                for kp in range(kp_lo, kp_hi + 1):
                    if kp < 1:
                        continue
                    base = n_off + (kp - 1) * K
                    for i in range(K):
                        if cp[i, j]:
                            v = prev[base + i] + g
                            if v < cost[s]:
                                cost[s] = v
                                back[t, s] = base + i
        for s in range(n_state):
            prev[s] = cost[s]

    cdef Py_ssize_t best = 0
    for s in range(1, n_state):
        if prev[s] < prev[best]:
            best = s
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
