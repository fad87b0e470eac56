import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gridkit.data import case14_text, load_case14
from gridkit.errors import CaseError, DimensionError
from gridkit.netmodel import (ComplexState, ac_injections, branch_flows, build_admittance, build_dc,
                              dc_injections, parse_case, shunt_power)

from _util import random_case, random_state, two_bus


def test_parse_two_bus():
    case = two_bus()
    assert case.n_bus == 2 and case.n_branch == 1
    assert case.slack == 0


def test_parse_case14():
    case = load_case14()
    assert case.n_bus == 14
    assert case.n_branch == 20
    assert len(case.generators) == 5


def test_case_round_trip():
    case = load_case14()
    again = parse_case(case.dumps())
    assert again == case


def _doc(**branch):
    br = {"from": 1, "to": 2, "x": 0.1}
    br.update(branch)
    return {"version": 1, "buses": [{"id": 1, "type": "slack"}, {"id": 2, "type": "PQ"}],
            "branches": [br]}


@pytest.mark.parametrize("doc, msg", [
    ("{not json", "malformed JSON"),
    (json.dumps({"version": 1, "buses": [{"id": 1, "type": "PQ"}], "branches": []}), "missing slack"),
    (json.dumps(_doc(x=0.0)), "nonpositive reactance"),
    (json.dumps(_doc(to=7)), "dangling branch endpoint"),
    (json.dumps(_doc(colour="red")), "unknown key"),
])
def test_parse_errors(doc, msg):
    with pytest.raises(CaseError, match=msg):
        parse_case(doc)


def test_two_slack_rejected():
    doc = _doc()
    doc["buses"][1]["type"] = "slack"
    with pytest.raises(CaseError, match="exactly one slack"):
        parse_case(json.dumps(doc))


def test_bad_generator_limits():
    doc = _doc()
    doc["generators"] = [{"bus": 1, "p_min": 2.0, "p_max": 1.0}]
    with pytest.raises(CaseError, match="p_min > p_max"):
        parse_case(json.dumps(doc))


def test_admittance_two_bus():
    Y = build_admittance(two_bus()).Y
    assert np.allclose(Y, [[-10j, 10j], [10j, -10j]], atol=1e-12)


def test_admittance_charging():
    Y = build_admittance(two_bus(b_c=0.2)).Y
    assert np.allclose(np.diag(Y), [-10j + 0.1j, -10j + 0.1j], atol=1e-12)
    assert np.isclose(Y[0, 1], 10j)


def test_phase_shifter_asymmetric():
    ym = build_admittance(two_bus(shift=0.1))
    assert not ym.symmetric
    assert not np.isclose(ym.Y[0, 1], ym.Y[1, 0])
    assert build_admittance(two_bus(tap=1.05)).symmetric


def test_unit_tap_is_plain_pi_model():
    rng = np.random.default_rng(3)
    case = random_case(rng, 6)
    Y = build_admittance(case).Y
    ref = np.diag([1j * b.b_shunt for b in case.buses]).astype(complex)
    for br, m, n in zip(case.branches, case.from_idx, case.to_idx):
        y = 1 / complex(br.r, br.x)
        ref[m, m] += y + 0.5j * br.b_c
        ref[n, n] += y + 0.5j * br.b_c
        ref[m, n] -= y
        ref[n, m] -= y
    assert np.allclose(Y, ref, atol=1e-12)


def test_dc_two_bus():
    dc = build_dc(two_bus())
    assert np.allclose(dc.Bx, [[10, -10], [-10, 10]])
    assert np.allclose(dc.b_branch, [-10])


def test_dc_case14_nullspace():
    dc = build_dc(load_case14())
    assert np.abs(dc.Bx @ np.ones(14)).max() < 1e-12


def test_dc_rank_disconnected():
    rng = np.random.default_rng(0)
    case = random_case(rng, 4, extra=0, components=2)
    assert case.n_components() == 2
    assert np.linalg.matrix_rank(build_dc(case).Bx) == 2


def test_ac_flat_state():
    case = two_bus(b_c=0.2)
    P, Q = ac_injections(build_admittance(case), ComplexState.flat(2))
    assert np.allclose(P, 0, atol=1e-14)
    assert np.allclose(Q, [-0.1, -0.1])


def test_ac_two_bus_angle():
    P, _ = ac_injections(build_admittance(two_bus()), ComplexState(np.ones(2), np.array([0.1, 0.0])))
    assert np.isclose(P[0], 10 * np.sin(0.1), rtol=0, atol=1e-12)


def test_polar_rect_case14():
    rng = np.random.default_rng(1)
    ym = build_admittance(load_case14())
    for _ in range(20):
        va, vm = random_state(rng, 14)
        s = ComplexState(vm, va)
        Pp, Qp = ac_injections(ym, s, "polar")
        Pr, Qr = ac_injections(ym, s, "rect")
        assert np.abs(Pp - Pr).max() < 1e-12 * max(1, np.abs(Pp).max())
        assert np.abs(Qp - Qr).max() < 1e-12 * max(1, np.abs(Qp).max())


def test_state_conversions():
    rng = np.random.default_rng(2)
    va, vm = random_state(rng, 9)
    s = ComplexState(vm, va)
    back = ComplexState.from_rect(s.vr, s.vi)
    assert np.allclose(back.vm, vm, atol=1e-15) and np.allclose(back.va, va, atol=1e-15)


def test_injection_dimension_error():
    with pytest.raises(DimensionError):
        ac_injections(build_admittance(two_bus()), ComplexState.flat(3))
    with pytest.raises(DimensionError):
        dc_injections(build_dc(two_bus()), [0.0], [1.0, 1.0])


def test_branch_currents_series_only():
    s = ComplexState(np.array([1.0, 0.98]), np.array([0.0, -0.05]))
    fl = branch_flows(build_admittance(two_bus()), s)
    assert fl.i_to[0] == -fl.i_from[0]


def test_branch_currents_charging():
    s = ComplexState(np.array([1.0, 0.98]), np.array([0.0, -0.05]))
    fl = branch_flows(build_admittance(two_bus(b_c=0.3)), s)
    assert abs(fl.i_to[0] + fl.i_from[0]) > 1e-3


def test_flows_balance_injections():
    rng = np.random.default_rng(4)
    case = random_case(rng, 8, transformers=True)
    ym = build_admittance(case)
    va, vm = random_state(rng, 8)
    s = ComplexState(vm, va)
    fl = branch_flows(ym, s)
    P, Q = ac_injections(ym, s)
    total = shunt_power(ym, s).astype(complex)
    np.add.at(total, case.from_idx, fl.s_from)
    np.add.at(total, case.to_idx, fl.s_to)
    assert np.allclose(total, P + 1j * Q, atol=1e-12)


def test_dc_injections_hand():
    dc = build_dc(two_bus())
    P, _ = dc_injections(dc, [0.1, 0.0], [1.0, 1.0])
    assert np.allclose(P, [1.0, -1.0])
    P, _ = dc_injections(dc, [0.3, 0.3], [1.0, 1.0])
    assert np.allclose(P, 0.0)


def test_dc_reactive_shunt_term():
    dc = build_dc(two_bus(b_c=0.2))
    _, Q = dc_injections(dc, [0.0, 0.0], [1.0, 1.0])
    assert np.allclose(Q, [-0.1, -0.1])


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10 ** 6), st.integers(1, 3))
def test_laplacian_properties(seed, comps):
    rng = np.random.default_rng(seed)
    case = random_case(rng, int(rng.integers(2 * comps + 1, 13)), components=comps)
    dc = build_dc(case)
    assert np.abs(dc.Bx - dc.A.T @ dc.D @ dc.A).max() < 1e-12
    assert np.abs(dc.Bx @ np.ones(case.n_bus)).max() < 1e-12
    assert np.linalg.eigvalsh(dc.Bx).min() > -1e-10
    assert np.linalg.matrix_rank(dc.Bx) == case.n_bus - case.n_components()
    P, _ = dc_injections(dc, rng.normal(size=case.n_bus), np.ones(case.n_bus))
    assert abs(P.sum()) < 1e-12 * max(1, np.abs(P).max())


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_symmetry_iff_no_shift(seed):
    rng = np.random.default_rng(seed)
    case = random_case(rng, transformers=True)
    has_shift = any(br.shift != 0 for br in case.branches)
    assert build_admittance(case).symmetric == (not has_shift)


def test_small_angle_limit():
    rng = np.random.default_rng(5)
    case = random_case(rng, 7, lossy=False)
    ym, dc = build_admittance(case), build_dc(case)
    theta = rng.normal(size=7)
    theta -= theta[0]
    ratios = []
    for s in (1e-2, 1e-3):
        P_ac, _ = ac_injections(ym, ComplexState(np.ones(7), s * theta))
        P_dc, _ = dc_injections(dc, s * theta, np.ones(7))
        ratios.append(np.abs(P_ac - P_dc).max() / s ** 2)
    assert ratios[1] <= ratios[0] * 1.5 + 1e-6


def test_bundled_text_parses():
    assert parse_case(case14_text()).n_bus == 14
