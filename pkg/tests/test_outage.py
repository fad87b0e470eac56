from itertools import combinations

import numpy as np
import pytest

from gridkit.data import load_case14
from gridkit.errors import GridkitError, SingularSystemError
from gridkit.netmodel import Branch, Bus, GridCase, build_dc
from gridkit.outage import (add_noise, build_outage_model, identify_exhaustive, identify_omp,
                            reduced_inverse, simulate_outage)


def ring4():
    buses = (Bus(1, "slack"), Bus(2, "PQ"), Bus(3, "PQ"), Bus(4, "PQ"))
    branches = (Branch(1, 2, 0.1), Branch(2, 3, 0.2), Branch(3, 4, 0.15), Branch(4, 1, 0.25))
    return GridCase(buses, branches)


P4 = np.array([1.0, -0.3, 0.5, -1.2])


def _injections(case, seed=0):
    p = np.random.default_rng(seed).normal(size=case.n_bus)
    return p - p.mean()


def _model(case, p, lines, internal=None):
    pre, post = simulate_outage(case, p, lines)
    return build_outage_model(build_dc(case), pre, post, internal)


def _safe_pairs(case):
    for pair in combinations(range(case.n_branch), 2):
        if case.with_branches([k for k in range(case.n_branch) if k not in pair]).n_components() == 1:
            yield pair


def test_no_event_zero_observation():
    dc = build_dc(ring4())
    theta = np.array([0.0, -0.1, 0.05, 0.02])
    model = build_outage_model(dc, theta, theta)
    assert not np.any(model.observation)
    est = identify_exhaustive(model, 1)
    assert est.lines == (0,) and est.residual == 0.0
    assert np.abs(est.m).max() < 1e-12


def test_ring_single_outage_forward_model():
    case = ring4()
    dc = build_dc(case)
    pre, post = simulate_outage(case, P4, [1])
    model = build_outage_model(dc, pre, post)
    a = dc.A[1]
    m = a @ post / case.branches[1].x
    assert np.allclose(model.observation, m * reduced_inverse(dc) @ a, atol=1e-12)


def test_internal_restriction():
    case = ring4()
    pre, post = simulate_outage(case, P4, [2])
    full = build_outage_model(build_dc(case), pre, post)
    same = build_outage_model(build_dc(case), pre, post, [1, 0, 2, 3])
    assert np.array_equal(full.regressors, same.regressors)
    part = build_outage_model(build_dc(case), pre, post, [0, 2])
    assert part.regressors.shape == (2, 4)
    with pytest.raises(GridkitError, match="reference"):
        build_outage_model(build_dc(case), pre, post, [1, 2])


def test_disconnecting_outage_rejected():
    with pytest.raises(SingularSystemError):
        simulate_outage(ring4(), P4, [0, 1])


def test_exhaustive_guard():
    case = ring4()
    with pytest.raises(GridkitError):
        identify_exhaustive(_model(case, P4, [1]), 3)


def test_omp_needs_stop_rule():
    with pytest.raises(GridkitError):
        identify_omp(_model(ring4(), P4, [1]))


def test_omp_k_zero():
    model = _model(ring4(), P4, [1])
    est = identify_omp(model, k=0)
    assert est.lines == ()
    assert np.isclose(est.residual, np.linalg.norm(model.observation))


def test_case14_singles_exact():
    case = load_case14()
    p = _injections(case)
    for l in range(case.n_branch):
        try:
            model = _model(case, p, [l])
        except SingularSystemError:
            continue
        ex = identify_exhaustive(model, 1)
        assert ex.lines == (l,) and ex.residual < 1e-9
        assert identify_omp(model, k=1).lines == ex.lines
        assert identify_omp(model, k=1, whiten=False, refine=False).lines == ex.lines


def test_case14_doubles_match_oracle():
    case = load_case14()
    p = _injections(case, 1)
    for pair in list(_safe_pairs(case))[::3]:
        model = _model(case, p, pair)
        ex = identify_exhaustive(model, 2)
        assert identify_omp(model, k=2).lines == ex.lines
        assert ex.residual < 1e-9
        if ex.lines != pair:
            # two edges of a triangle span the same subspace as any other two
            assert set(ex.lines) | set(pair) <= _triangle_of(case, pair)


def _triangle_of(case, pair):
    ends = [{case.branches[k].from_bus, case.branches[k].to_bus} for k in pair]
    nodes = ends[0] | ends[1]
    assert len(nodes) == 3
    return {k for k, b in enumerate(case.branches) if {b.from_bus, b.to_bus} <= nodes}


def test_forward_consistency_partial_internal():
    case = load_case14()
    p = _injections(case, 2)
    internal = [0, 1, 2, 3, 4, 5, 8, 9, 12, 13]
    model = _model(case, p, [3, 12], internal)
    M = model.regressors[:, [3, 12]]
    coef = np.linalg.lstsq(M, model.observation, rcond=None)[0]
    assert np.linalg.norm(model.observation - M @ coef) < 1e-10


def test_threshold_stop():
    case = load_case14()
    model = _model(case, _injections(case, 3), [5])
    est = identify_omp(model, threshold=1e-9)
    assert est.lines == (5,)


def test_noise_level():
    case = load_case14()
    model = _model(case, _injections(case, 4), [2, 9])
    noisy = add_noise(model, 20.0, np.random.default_rng(0))
    eta = noisy.observation - model.observation
    snr = 10 * np.log10(np.mean(model.observation ** 2) / np.mean(eta ** 2))
    assert abs(snr - 20.0) < 3.0
