import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gridkit import _kernels_py, kernels

try:
    from gridkit import _kernels as compiled
except ImportError:
    compiled = None

IMPLS = [_kernels_py] + ([compiled] if compiled is not None else [])
needs_compiled = pytest.mark.skipif(compiled is None, reason="compiled kernels not built")


def _random_box(rng, n):
    c = rng.normal(size=n) * 3
    w = rng.uniform(0.1, 2.0, n)
    lo = rng.uniform(-1, 0, n)
    hi = lo + rng.uniform(0, 2, n)
    total = rng.uniform(lo.sum(), hi.sum())
    return c, w, lo, hi, total


@needs_compiled
@settings(max_examples=60, deadline=None)
@given(st.integers(1, 30), st.integers(0, 10 ** 6))
def test_box_sum_backends_agree(n, seed):
    args = _random_box(np.random.default_rng(seed), n)
    x_py, _ = _kernels_py.box_sum_solve(*args)
    x_cy, _ = compiled.box_sum_solve(*args)
    assert np.abs(x_py - x_cy).max() < 1e-12
    assert abs(x_py.sum() - args[4]) < 1e-9
    assert np.all(x_py >= args[2] - 1e-12) and np.all(x_py <= args[3] + 1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 8), st.integers(0, 10 ** 6))
@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_box_sum_is_weighted_projection(n, seed):
    # x minimises sum (x - c)^2 / w over the box and the sum constraint
    from scipy.optimize import minimize

    c, w, lo, hi, total = _random_box(np.random.default_rng(seed), n)
    x, _ = kernels.box_sum_solve(c, w, lo, hi, total)
    ref = minimize(lambda v: np.sum((v - c) ** 2 / w), np.clip(np.full(n, total / n), lo, hi),
                   bounds=list(zip(lo, hi)), constraints=[{"type": "eq", "fun": lambda v: v.sum() - total}],
                   method="SLSQP", options={"ftol": 1e-14, "maxiter": 500})
    assert np.sum((x - c) ** 2 / w) <= ref.fun + 1e-7


def test_box_sum_extremes():
    c, w = np.array([0.0, 1.0]), np.ones(2)
    lo, hi = np.zeros(2), np.ones(2)
    assert np.allclose(kernels.box_sum_solve(c, w, lo, hi, 2.0)[0], [1, 1])
    assert np.allclose(kernels.box_sum_solve(c, w, lo, hi, 0.0)[0], [0, 0])
    assert np.allclose(kernels.box_sum_solve(c, w, lo, hi, 1.0)[0], [0, 1])
    with pytest.raises(ValueError):
        kernels.box_sum_solve(c, w, lo, hi, 3.0)


def _dp_brute(stage, compat, init_compat, startup, t_up, t_down, init_on):
    """Enumerate every cell sequence (-1 = off) and apply the DP rules directly."""
    T, K = stage.shape
    best = (np.inf, None)
    for seq in itertools.product(range(-1, K), repeat=T):
        on = [s >= 0 for s in seq]
        cost = 0.0
        ok = True
        prev_on = init_on
        # run lengths, starting saturated
        run = t_up if init_on else t_down
        for t, s in enumerate(seq):
            if on[t] != prev_on:
                if prev_on and run < t_up or not prev_on and run < t_down:
                    ok = False
                    break
                run = 1
            else:
                run += 1
            if on[t]:
                cost += stage[t, s]
                if not prev_on:
                    cost += startup
                elif t == 0:
                    ok = ok and bool(init_compat[s])
                else:
                    ok = ok and bool(compat[seq[t - 1], s])
            prev_on = on[t]
        if ok and cost < best[0] - 1e-12:
            best = (cost, seq)
    return best


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 5), st.integers(1, 3), st.integers(1, 3), st.integers(1, 3),
       st.booleans(), st.integers(0, 10 ** 6))
def test_uc_dp_matches_enumeration(T, K, t_up, t_down, init_on, seed):
    rng = np.random.default_rng(seed)
    stage = rng.normal(size=(T, K)) * 3
    compat = (rng.uniform(size=(K, K)) < 0.7).astype(np.uint8)
    np.fill_diagonal(compat, 1)
    init_compat = (rng.uniform(size=K) < 0.7).astype(np.uint8)
    init_compat[0] = 1
    startup = float(rng.uniform(0, 4))
    args = (stage, compat, init_compat, startup, t_up, t_down, init_on)
    value, seq = _dp_brute(*args)
    cells = []
    for impl in IMPLS:
        u, cell, v = impl.uc_dp(*args)
        assert abs(v - value) < 1e-9
        assert np.array_equal(u, [int(s >= 0) for s in cell])
        cells.append(cell)
    assert all(np.array_equal(cells[0], c) for c in cells)


def test_backend_name():
    assert kernels.BACKEND in ("cython", "python")
