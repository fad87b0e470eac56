import argparse
import contextlib
import csv
import io
import json
import os
from pathlib import Path

import numpy as np
import pytest

from gridkit.cli import build_parser, main
from gridkit.data import load_case14
from gridkit.estimation import MeasurementSet, simulate_measurements
from gridkit.netmodel import build_dc
from gridkit.powerflow import solve_dc

from _util import dc_plan, two_peak_fleet

GOLDEN = Path(__file__).parent / "golden"


def _commands(parser, prefix=()):
    yield prefix
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            for name, sub in action.choices.items():
                yield from _commands(sub, prefix + (name,))


def _help_text(words, monkeypatch):
    monkeypatch.setenv("COLUMNS", "80")
    buf = io.StringIO()
    with contextlib.redirect_stdout(buf):
        assert main([*words, "--help"]) == 0
    return buf.getvalue()


def test_help_matches_golden(monkeypatch):
    regen = os.environ.get("GRIDKIT_REGEN_GOLDEN") == "1"
    GOLDEN.mkdir(exist_ok=True)
    for words in _commands(build_parser()):
        path = GOLDEN / ("_".join(("gridkit",) + words) + ".txt")
        text = _help_text(words, monkeypatch)
        if regen:
            path.write_text(text, encoding="utf-8")
        assert path.read_text(encoding="utf-8") == text, path.name


def run(args, tmp_path, name="out"):
    out = tmp_path / name
    code = main([*args, "--out-dir", str(out), "--quiet"])
    report = json.loads((out / "report.json").read_text())
    return code, report, out


def test_usage_error_exit_2(capsys):
    assert main(["pf", "dc"]) == 2
    assert main(["no-such-command"]) == 2


def test_case_validate(tmp_path):
    code, rep, _ = run(["case", "validate", "--case", "@case14"], tmp_path)
    assert code == 0 and rep["status"] == 0 and rep["version"] == 1
    assert "@case14" in rep["inputs"]
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    code, rep, _ = run(["case", "validate", "--case", str(bad)], tmp_path, "bad")
    assert code == 1 and "malformed JSON" in rep["error"]


def test_missing_file_exit_1(tmp_path):
    code, rep, _ = run(["case", "validate", "--case", str(tmp_path / "nope.json")], tmp_path)
    assert code == 1 and rep["status"] == 1


def test_pf_dc_tables(tmp_path):
    case = load_case14()
    p = np.random.default_rng(0).normal(size=14)
    p -= p.mean()
    inj = tmp_path / "p.json"
    inj.write_text(json.dumps(p.tolist()))
    code, rep, out = run(["pf", "dc", "--case", "@case14", "--injections", str(inj)], tmp_path)
    assert code == 0
    rows = list(csv.DictReader((out / "theta.csv").open()))
    theta = np.array([float(r["theta"]) for r in rows])
    assert np.allclose(theta, solve_dc(build_dc(case), p), atol=1e-12)
    assert (out / "flows.csv").exists()
    assert sorted(rep["files"]) == ["flows.csv", "theta.csv"]


def test_pf_ac_runs(tmp_path):
    code, rep, out = run(["pf", "ac", "--case", "@case14"], tmp_path)
    assert code == 0 and rep["result"]["converged"]
    assert (out / "state.csv").exists()


def _dc_measurements(tmp_path, corrupt=None):
    case = load_case14()
    theta = solve_dc(build_dc(case), np.linspace(-0.5, 0.5, 14) - 0.0)
    from gridkit.netmodel import ComplexState
    ms = simulate_measurements(case, ComplexState(np.ones(14), theta), dc_plan(case), 0.01, seed=1,
                               model="dc")
    if corrupt is not None:
        z = ms.z.copy()
        z[corrupt] += 10 * 0.01 * 3
        ms = ms.with_values(z)
    path = tmp_path / "meas.json"
    path.write_text(ms.dumps())
    return path


def test_se_baddata_lists_removed(tmp_path):
    meas = _dc_measurements(tmp_path, corrupt=4)
    code, rep, out = run(["se", "baddata", "--case", "@case14", "--meas", str(meas)], tmp_path)
    assert code == 0
    assert rep["result"]["chi2_detected"]
    assert 4 in rep["result"]["removed"]
    assert (out / "theta.csv").exists()


def test_se_attack_seed_reproducible(tmp_path):
    meas = _dc_measurements(tmp_path)
    args = ["se", "attack", "--case", "@case14", "--meas", str(meas), "--seed", "7"]
    c1, r1, o1 = run(args, tmp_path, "a")
    c2, r2, o2 = run(args, tmp_path, "b")
    assert c1 == c2 == 0
    # wall time is the only field allowed to differ
    r1.pop("wall_time"), r2.pop("wall_time")
    r1.pop("command"), r2.pop("command")
    assert r1 == r2
    assert (o1 / "attack.csv").read_text() == (o2 / "attack.csv").read_text()
    _, r3, _ = run(args[:-1] + ["8"], tmp_path, "c")
    assert r3["result"] != r1["result"]


def test_outage_omp(tmp_path):
    code, rep, out = run(["outage", "omp", "--case", "@case14", "--simulate", "3,9", "--k", "2"], tmp_path)
    assert code == 0
    assert sorted(rep["result"]["lines"]) == [3, 9]
    assert (out / "lines.csv").exists()


def test_outage_noise_seeded(tmp_path):
    args = ["outage", "exhaustive", "--case", "@case14", "--simulate", "5", "--snr", "30", "--seed", "3"]
    _, r1, _ = run(args, tmp_path, "a")
    _, r2, _ = run(args, tmp_path, "b")
    assert r1["result"] == r2["result"]


def test_signal_commands(tmp_path):
    fs = 32 * 60.0
    t = np.arange(64) / fs
    wave = tmp_path / "w.csv"
    wave.write_text("time,value\n" + "".join(f"{a!r},{b!r}\n" for a, b in
                                             zip(t.tolist(), np.cos(2 * np.pi * 60 * t).tolist())))
    code, rep, _ = run(["signal", "phasor", "--wave", str(wave)], tmp_path, "p")
    assert code == 0 and abs(rep["result"]["magnitude"] - 1) < 1e-9
    fs = 20.0
    t = np.arange(200) / fs
    x = np.exp(-0.1 * t) * np.cos(2 * np.pi * 0.5 * t)
    wave.write_text("time,value\n" + "".join(f"{a!r},{b!r}\n" for a, b in zip(t.tolist(), x.tolist())))
    code, rep, out = run(["signal", "modes", "--wave", str(wave), "--order", "2"], tmp_path, "m")
    assert code == 0 and (out / "modes.csv").exists()
    assert abs(rep["result"]["modes"][0]["frequency"] - 0.5) < 1e-6


def test_ed_and_opf(tmp_path):
    units = tmp_path / "u.json"
    units.write_text(json.dumps({"units": [{"cost": {"c2": 1.0}, "p_max": 10},
                                           {"cost": {"c2": 2.0}, "p_max": 10}], "demand": 3.0}))
    code, rep, _ = run(["ed", "--units", str(units)], tmp_path, "ed")
    assert code == 0 and abs(rep["result"]["lambda"] - 4.0) < 1e-8
    code, rep, _ = run(["ed", "--units", str(units), "--wind-shape", "2", "--wind-scale", "1",
                        "--eps", "0.99"], tmp_path, "ced")
    assert code == 0 and abs(rep["result"]["check"]["wind_quantile"] - 0.1003) < 1e-4
    code, rep, out = run(["opf", "--case", "@case14"], tmp_path, "opf")
    assert code == 0 and (out / "lmp.csv").exists()
    lmps = np.array(rep["result"]["lmps"])
    assert np.ptp(lmps) < 1e-6


def test_infeasible_ed_exit_1(tmp_path):
    units = tmp_path / "u.json"
    units.write_text(json.dumps({"units": [{"cost": {"c2": 1.0}, "p_max": 1}], "demand": 3.0}))
    code, rep, _ = run(["ed", "--units", str(units)], tmp_path)
    assert code == 1 and "InfeasibleError" in rep["error"]


def test_uc(tmp_path):
    inst = tmp_path / "uc.json"
    inst.write_text(json.dumps({"demand": [0, 2], "units": [
        {"cost": {"c1": 1.0}, "p_min": 1, "p_max": 2, "startup": 10}]}))
    for extra in ([], ["--bruteforce"]):
        code, rep, out = run(["uc", "--instance", str(inst), *extra], tmp_path, "uc" + "".join(extra))
        assert code == 0 and abs(rep["result"]["primal"] - 12) < 1e-8
        assert (out / "schedule.csv").exists()


def test_dr(tmp_path):
    inst = tmp_path / "dr.json"
    inst.write_text(json.dumps({"T": 2, "lse": {"c2": 0.5, "c1": 0.1, "s_min": 0, "s_max": 10},
                                "users": [{"appliances": [{"weight": 1, "target": 2, "p_min": 0, "p_max": 3}]},
                                          {"appliances": [{"weight": 2, "target": 1, "p_min": 0, "p_max": 3,
                                                           "energy": 2}]}]}))
    _, central, _ = run(["dr", "--instance", str(inst)], tmp_path, "c")
    code, dual, out = run(["dr", "--instance", str(inst), "--mode", "dual"], tmp_path, "d")
    assert code == 0 and (out / "prices.csv").exists()
    assert abs(central["result"]["welfare"] - dual["result"]["welfare"]) < 1e-3
    code, cut, _ = run(["dr", "--instance", str(inst), "--curtail", "2"], tmp_path, "cut")
    assert code == 1  # a two-period instance cannot be curtailed as one period


def test_pev_trace_monotone(tmp_path):
    fleet = tmp_path / "f.json"
    fleet.write_text(json.dumps(two_peak_fleet().to_dict()))
    code, rep, out = run(["pev", "distributed", "--fleet", str(fleet)], tmp_path, "d")
    assert code == 0
    rows = list(csv.DictReader((out / "trace.csv").open()))
    obj = [float(r["objective"]) for r in rows]
    assert len(obj) == rep["result"]["iterations"]
    assert all(b <= a + 1e-12 for a, b in zip(obj, obj[1:]))
    _, cen, _ = run(["pev", "central", "--fleet", str(fleet)], tmp_path, "c")
    assert np.abs(np.array(cen["result"]["load"]) - np.array(rep["result"]["load"])).max() < 1e-4
