import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gridkit.errors import GridkitError, InfeasibleError
from gridkit.flexload import (Appliance, DrInstance, Mailbox, PevFleet, curtail_solve, dr_solve,
                              pev_central, pev_distributed)
from gridkit.kernels import box_sum_solve

from _util import random_dr_instance, two_peak_fleet


def test_single_free_appliance():
    app = Appliance(1.0, 1.0, -np.inf, np.inf)
    inst = DrInstance(3, ((app,),), 0.0, 0.0, -np.inf, np.inf)
    for mode in ("central", "dual"):
        res = dr_solve(inst, mode)
        assert np.allclose(res.schedules[0], 1.0, atol=1e-6)


def test_symmetric_users():
    app = Appliance([1.0, 2.0], [2.0, 1.0], [0, 0], [3, 3])
    inst = DrInstance(2, ((app,), (app,)), 0.5, 0.1, 0.0, 10.0)
    for mode in ("central", "dual"):
        res = dr_solve(inst, mode)
        assert np.allclose(res.schedules[0], res.schedules[1], atol=1e-6)


def test_dual_matches_central_random():
    rng = np.random.default_rng(11)
    for _ in range(3):
        inst = random_dr_instance(rng)
        c = dr_solve(inst, "central")
        d = dr_solve(inst, "dual")
        assert d.converged
        assert abs(c.welfare - d.welfare) < 1e-3 * max(1, abs(c.welfare))
        assert np.abs(c.prices - d.prices).max() < 1e-3
        for a, p in zip(inst.appliances, np.concatenate(d.schedules)):
            assert np.all(p >= a.p_min - 1e-9) and np.all(p <= a.p_max + 1e-9)
            if a.energy is not None:
                assert abs(p.sum() - a.energy) < 1e-9


def test_central_prices_are_marginal_cost():
    inst = random_dr_instance(np.random.default_rng(2))
    res = dr_solve(inst)
    s = res.supply
    inside = (s > inst.s_min + 1e-6) & (s < inst.s_max - 1e-6)
    assert np.allclose(res.prices[inside], (2 * inst.c2 * s + inst.c1)[inside], atol=1e-6)


def test_dual_linear_cost_fallback():
    app = Appliance(1.0, 2.0, 0.0, 5.0)
    inst = DrInstance(2, ((app,),), 0.0, 1.0, 0.0, 10.0)
    res = dr_solve(inst, "dual", max_iter=20000, tol=1e-7)
    # price = c1 = 1, so p = 2 - 1/2
    assert np.allclose(res.schedules[0], 1.5, atol=1e-3)


def test_instance_round_trip():
    inst = random_dr_instance(np.random.default_rng(4))
    again = DrInstance.from_dict(json.loads(json.dumps(inst.to_dict())))
    assert np.isclose(dr_solve(again).welfare, dr_solve(inst).welfare)


def test_inconsistent_energy():
    with pytest.raises(InfeasibleError):
        Appliance([1, 1], [0, 0], [0, 0], [1, 1], energy=3.0)
    with pytest.raises(GridkitError):
        dr_solve(random_dr_instance(np.random.default_rng(0)), "gossip")


def test_mailbox():
    box = Mailbox()
    box.broadcast("lse", ["a", "b"], 1.0)
    box.send("a", "lse", 2.0)
    assert box.receive("a") == [("lse", 1.0)]
    assert box.receive("a") == []
    assert box.sent == 3


def test_curtail_equal_weights():
    app = Appliance(1.0, 3.0, 0.0, 5.0)
    cut = curtail_solve([[app], [app]], 4.0)
    assert np.allclose(np.concatenate(cut.allocation), [2.0, 2.0], atol=1e-6)
    # marginal discomfort 2 w (target - p) = 2
    assert np.isclose(cut.price, 2.0, atol=1e-6)


def test_curtail_sensitive_user_cuts_less():
    touchy = Appliance(2.0, 3.0, 0.0, 5.0)
    calm = Appliance(1.0, 3.0, 0.0, 5.0)
    cut = curtail_solve([[touchy], [calm]], 3.0)
    a = np.concatenate(cut.allocation)
    c = 3.0 - a
    assert np.isclose(c[0], 0.5 * c[1], atol=1e-6)
    assert np.isclose(a.sum(), 3.0)


def test_curtail_matches_kkt_random():
    rng = np.random.default_rng(8)
    users = [[Appliance(rng.uniform(0.5, 2), rng.uniform(1, 3), 0.0, 10.0)] for _ in range(5)]
    deficit = 5.0
    cut = curtail_solve(users, deficit)
    a = np.concatenate(cut.allocation)
    w = np.array([u[0].weight[0] for u in users])
    tgt = np.array([u[0].target[0] for u in users])
    ref, _ = box_sum_solve(tgt, 0.5 / w, np.zeros(5), np.full(5, 10.0), deficit)
    assert np.abs(a - ref).max() < 1e-6


# --------------------------------------------------------------------------- PEV


def test_single_vehicle_two_iterations():
    fleet = PevFleet([2.0, 0.0], [0.0], [1.0], [1.0])
    res = pev_distributed(fleet)
    assert np.allclose(res.r[0], [0.0, 1.0], atol=1e-9)
    assert res.iterations <= 2
    wide = PevFleet([2.0, 0.0], [0.0], [2.0], [1.0])
    for r in (pev_central(wide), pev_distributed(wide)):
        assert np.allclose(r.r[0], [0.0, 1.0], atol=1e-7)
        assert np.allclose(r.load, [2.0, 1.0], atol=1e-7)


def test_distributed_matches_central():
    fleet = two_peak_fleet()
    c = pev_central(fleet)
    d = pev_distributed(fleet)
    assert d.converged
    assert np.abs(c.load - d.load).max() < 1e-4
    assert all(b <= a + 1e-12 for a, b in zip(d.objectives, d.objectives[1:]))


def test_flat_fill():
    T = 12
    fleet = PevFleet(np.full(T, 2.0), np.zeros(4), np.full(4, 5.0), [1.0, 2.0, 0.5, 1.5])
    d = pev_distributed(fleet)
    assert np.ptp(d.load) < 1e-6
    assert np.allclose(d.r.sum(1), fleet.energy, atol=1e-9)


def test_symmetric_fleet():
    fleet = PevFleet(two_peak_fleet().demand, np.zeros(3), np.full(3, 0.1), np.full(3, 0.6))
    d = pev_distributed(fleet)
    assert np.abs(d.r - d.r[0]).max() < 1e-5


def test_central_beats_random_profiles():
    fleet = two_peak_fleet()
    best = pev_central(fleet).objective
    rng = np.random.default_rng(0)
    for _ in range(100):
        r = np.array([box_sum_solve(rng.uniform(0, 1, fleet.T), np.ones(fleet.T), fleet.r_min[n],
                                    fleet.r_max[n], fleet.energy[n])[0] for n in range(fleet.N)])
        assert best <= fleet.objective(r) + 1e-9


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 5), st.integers(2, 10), st.integers(0, 10 ** 6))
def test_distributed_invariants(n, T, seed):
    rng = np.random.default_rng(seed)
    hi = rng.uniform(0.2, 1.0, (n, T))
    energy = hi.sum(1) * rng.uniform(0.1, 0.9, n)
    fleet = PevFleet(rng.uniform(0, 2, T), np.zeros((n, T)), hi, energy)
    d = pev_distributed(fleet, max_iters=200)
    assert np.all(d.r >= -1e-12) and np.all(d.r <= hi + 1e-12)
    assert np.allclose(d.r.sum(1), energy, atol=1e-9)
    assert all(b <= a + 1e-9 * max(1, a) for a, b in zip(d.objectives, d.objectives[1:]))


def test_trace_csv():
    d = pev_distributed(two_peak_fleet(n=3, T=4))
    lines = d.trace_csv().splitlines()
    assert lines[0].startswith("iteration,objective,price_0")
    assert lines[1].startswith("1,")
    assert len(lines) == d.iterations + 1


def test_fleet_checks():
    with pytest.raises(InfeasibleError):
        PevFleet([1.0, 1.0], [0.0], [0.5], [2.0])
    fleet = two_peak_fleet(n=2, T=3)
    again = PevFleet.from_dict(fleet.to_dict())
    assert np.array_equal(again.r_max, fleet.r_max)
