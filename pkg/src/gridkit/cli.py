"""Command-line front end.

Every subcommand writes ``report.json`` (schema version 1) into ``--out-dir``
plus any CSV tables, and prints the report.  Exit status: 0 success,
1 domain or input error, 2 usage error.  A case path of ``@case14`` selects
the bundled 14-bus fixture.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .errors import GridkitError

REPORT_VERSION = 1


class _Inputs:
    """Reads input files and remembers their digests for the report."""

    def __init__(self):
        self.digests = {}

    def text(self, path) -> str:
        if path == "@case14":
            from .data import case14_text
            data = case14_text()
        else:
            data = Path(path).read_text(encoding="utf-8")
        self.digests[str(path)] = hashlib.sha256(data.encode()).hexdigest()
        return data

    def json(self, path):
        try:
            return json.loads(self.text(path))
        except json.JSONDecodeError as exc:
            raise GridkitError(f"{path}: malformed JSON: {exc}") from None

    def case(self, path):
        from .netmodel import parse_case
        return parse_case(self.text(path))


def _vector(doc, key):
    v = doc[key] if isinstance(doc, dict) else doc
    return np.asarray(v, dtype=float)


def _write_csv(out: Path, name: str, header, rows) -> str:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(v if isinstance(v, str) else repr(float(v)) if isinstance(v, float) else str(v)
                              for v in row))
    (out / name).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return name


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, (set, frozenset, tuple)):
        return list(obj)
    raise TypeError(f"not serialisable: {type(obj).__name__}")


def _clean(x):
    """Replace non-finite floats by strings so the output is strict JSON."""
    if isinstance(x, float) and not np.isfinite(x):
        return "inf" if x > 0 else "-inf" if x < 0 else "nan"
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, list):
        return [_clean(v) for v in x]
    return x


# --------------------------------------------------------------------------- handlers


def _cmd_case_validate(a, io, out):
    case = io.case(a.case)
    from .netmodel import build_admittance, build_dc
    ym = build_admittance(case)
    dc = build_dc(case)
    return {"n_bus": case.n_bus, "n_branch": case.n_branch, "n_gen": len(case.generators),
            "n_load": len(case.loads), "slack": case.bus_ids[case.slack],
            "components": case.n_components(), "laplacian_rank": int(np.linalg.matrix_rank(dc.Bx)),
            "symmetric_admittance": bool(np.allclose(ym.Y, ym.Y.T))}, []


def _default_injections(case):
    """Loads withdrawn everywhere, total supplied at the slack bus."""
    p = -case.bus_load()[0]
    p[case.slack] -= p.sum()
    return p


def _cmd_pf_dc(a, io, out):
    from .netmodel import build_dc
    from .powerflow import solve_dc
    case = io.case(a.case)
    p = _vector(io.json(a.injections), "p") if a.injections else _default_injections(case)
    ref = case.bus_index[a.ref] if a.ref is not None else None
    dc = build_dc(case)
    theta = solve_dc(dc, p, ref=ref)
    flows = dc.flows(theta)
    files = [_write_csv(out, "theta.csv", ["bus", "theta"], zip(case.bus_ids, theta.tolist())),
             _write_csv(out, "flows.csv", ["branch", "from", "to", "p"],
                        [(k, br.from_bus, br.to_bus, f) for k, (br, f) in
                         enumerate(zip(case.branches, flows.tolist()))])]
    return {"theta": theta, "flows": flows}, files


def _cmd_pf_ac(a, io, out):
    from .powerflow import operating_spec, solve_ac, spec_from_case
    case = io.case(a.case)
    if a.operating:
        spec = operating_spec(case, io.json(a.operating))
    elif a.case == "@case14":
        from .data import case14_operating
        spec = operating_spec(case, case14_operating())
    else:
        spec = spec_from_case(case)
    sol = solve_ac(case, spec, tol=a.tol, max_iter=a.max_iter)
    files = [_write_csv(out, "state.csv", ["bus", "vm", "va"],
                        zip(case.bus_ids, sol.state.vm.tolist(), sol.state.va.tolist()))]
    res = {"converged": sol.converged, "iterations": sol.iterations, "mismatch": sol.mismatch,
           "vm": sol.state.vm, "va": sol.state.va, "p": sol.p, "q": sol.q,
           "q_violations": list(sol.q_violations)}
    if not sol.converged:
        raise _Failed(res, files, "AC power flow did not converge")
    return res, files


class _Failed(Exception):
    """A domain failure that still carries a partial result."""

    def __init__(self, result, files, message):
        super().__init__(message)
        self.result, self.files = result, files


def _meas(a, io, case):
    from .estimation import parse_measurements
    meas = parse_measurements(io.text(a.meas))
    meas.validate(case)
    return meas


def _dc_system(case, meas):
    H, rows = meas.dc_matrix(case, ref=case.slack)
    if len(rows) == 0:
        raise GridkitError("no active-power measurements for the DC model")
    return H, rows, meas.z[rows], meas.sigma[rows]


def _theta_full(case, est):
    theta = np.insert(np.asarray(est), case.slack, 0.0)
    return theta


def _cmd_se_run(a, io, out):
    from .estimation import wls_gauss_newton
    case = io.case(a.case)
    meas = _meas(a, io, case)
    res = wls_gauss_newton(case, meas, tol=a.tol, max_iter=a.max_iter)
    files = [_write_csv(out, "state.csv", ["bus", "vm", "va"],
                        zip(case.bus_ids, res.state.vm.tolist(), res.state.va.tolist()))]
    return res.to_dict(), files


def _cmd_se_baddata(a, io, out):
    from .estimation import bad_data_scan
    case = io.case(a.case)
    meas = _meas(a, io, case)
    H, rows, z, sig = _dc_system(case, meas)
    rep = bad_data_scan(H, z, alpha=a.alpha, lnrt_threshold=a.lnrt, sigma=sig)
    d = rep.to_dict()
    d["removed"] = [int(rows[k]) for k in rep.removed]
    for r in d["rounds"]:
        if r["index"] is not None:
            r["index"] = int(rows[r["index"]])
    d["estimate"]["state"] = {"theta": _theta_full(case, rep.result.state)}
    files = [_write_csv(out, "theta.csv", ["bus", "theta"],
                        zip(case.bus_ids, _theta_full(case, rep.result.state).tolist()))]
    return d, files


def _cmd_se_observe(a, io, out):
    from .estimation import observability_check
    case = io.case(a.case)
    meas = _meas(a, io, case)
    chk = observability_check(case, meas)
    ids = case.bus_ids
    files = [_write_csv(out, "islands.csv", ["bus", "island"],
                        sorted((ids[b], k) for k, isl in enumerate(chk["numerical"].islands) for b in isl))]
    return {"agree": chk["agree"], "numerical": chk["numerical"].to_dict(case),
            "topological": chk["topological"].to_dict(case)}, files


def _cmd_se_attack(a, io, out):
    from .estimation import bad_data_scan, build_attack
    case = io.case(a.case)
    meas = _meas(a, io, case)
    H, rows, z, sig = _dc_system(case, meas)
    if a.attack:
        c = _vector(io.json(a.attack), "c")
    else:
        c = a.scale * np.random.default_rng(a.seed).standard_normal(H.shape[1])
    # the attack lives in measurement units: a = H c on the unwhitened model
    att = build_attack(H, c)
    before = bad_data_scan(H, z, alpha=a.alpha, lnrt_threshold=a.lnrt, sigma=sig)
    after = bad_data_scan(H, z + att.a, alpha=a.alpha, lnrt_threshold=a.lnrt, sigma=sig)
    shift = np.asarray(after.result.state) - np.asarray(before.result.state)
    files = [_write_csv(out, "attack.csv", ["measurement", "a"], zip(rows.tolist(), att.a.tolist()))]
    return {"c": c, "a": att.a, "support": att.support, "estimate_shift": shift,
            "shift_error": float(np.abs(shift - c).max()),
            "residual_change": float(np.abs(after.result.residuals - before.result.residuals).max()),
            "detected_before": before.chi2_detected, "detected_after": after.chi2_detected,
            "removed_after": [int(rows[k]) for k in after.removed]}, files


def _cmd_outage(a, io, out):
    from .netmodel import build_dc
    from .outage import (add_noise, build_outage_model, identify_exhaustive, identify_omp,
                         simulate_outage)
    case = io.case(a.case)
    idx = case.bus_index
    if a.angles:
        doc = io.json(a.angles)
        pre, post = _vector(doc, "pre"), _vector(doc, "post")
        truth = None
    elif a.simulate is not None:
        p = _vector(io.json(a.injections), "p") if a.injections else _default_injections(case)
        truth = sorted(int(s) for s in a.simulate.split(",") if s.strip())
        pre, post = simulate_outage(case, p, truth)
    else:
        raise GridkitError("give --angles or --simulate")
    internal = None if a.internal is None else [idx[int(b)] for b in a.internal.split(",")]
    model = build_outage_model(build_dc(case), pre, post, internal)
    if a.snr is not None:
        model = add_noise(model, a.snr, np.random.default_rng(a.seed))
    if a.method == "exhaustive":
        est = identify_exhaustive(model, a.k)
    else:
        est = identify_omp(model, k=a.k, threshold=a.threshold)
    res = est.to_dict()
    if truth is not None:
        res["true_lines"] = truth
        res["correct"] = sorted(est.lines) == truth
    files = [_write_csv(out, "lines.csv", ["branch", "from", "to", "m"],
                        [(l, case.branches[l].from_bus, case.branches[l].to_bus, float(est.m[l]))
                         for l in est.lines])]
    return res, files


def _wave(a, io):
    from .signals import WaveRecord
    return WaveRecord.from_csv(io.text(a.wave), f0=getattr(a, "f0", None))


def _cmd_signal_phasor(a, io, out):
    from .signals import estimate_phasor
    rec = _wave(a, io)
    spc = rec.samples_per_cycle
    n_win = int(round(a.cycles * spc)) if a.cycles else rec.samples.size
    ph = estimate_phasor(rec, a.start, a.start + n_win)
    return {"magnitude": abs(ph), "angle": float(np.angle(ph)), "real": ph.real, "imag": ph.imag,
            "fs": rec.fs, "window": [a.start, a.start + n_win]}, []


def _cmd_signal_modes(a, io, out):
    from .signals import prony_modes
    rec = _wave(a, io)
    modes = prony_modes(rec.samples, rec.fs, a.order, amp_tol=a.amp_tol)
    files = [_write_csv(out, "modes.csv", ["frequency", "decay", "damping_ratio", "amplitude", "phase"],
                        [(m.frequency, m.decay, m.damping_ratio, m.amplitude, m.phase) for m in modes])]
    return {"fs": rec.fs, "modes": [m.to_dict() for m in modes]}, files


def _cmd_ed(a, io, out):
    from .costs import CostFunction
    from .dispatch import WindSpec, chance_ed, economic_dispatch
    doc = io.json(a.units)
    units = doc["units"] if isinstance(doc, dict) else doc
    costs = [CostFunction.from_dict(u["cost"]) for u in units]
    p_min = [float(u.get("p_min", 0.0)) for u in units]
    p_max = [float(u["p_max"]) for u in units]
    demand = a.demand if a.demand is not None else float(doc["demand"])
    if a.eps is not None:
        if a.wind_shape is None or a.wind_scale is None:
            raise GridkitError("--eps needs --wind-shape and --wind-scale")
        sol = chance_ed(costs, p_min, p_max, demand, WindSpec(shape=a.wind_shape, scale=a.wind_scale), a.eps)
    else:
        sol = economic_dispatch(costs, p_min, p_max, demand, a.wind)
    files = [_write_csv(out, "dispatch.csv", ["unit", "p"], enumerate(sol.p.tolist()))]
    return sol.to_dict(), files


def _cmd_opf(a, io, out):
    from .dispatch import dc_opf
    case = io.case(a.case)
    loads = _vector(io.json(a.loads), "loads") if a.loads else None
    limits = None
    if a.limits:
        limits = np.array([np.inf if v is None else v for v in (lambda d: d["limits"] if isinstance(d, dict)
                                                                  else d)(io.json(a.limits))], dtype=float)
    sol = dc_opf(case, loads=loads, line_limits=limits, angle_penalty=a.angle_penalty)
    files = [_write_csv(out, "lmp.csv", ["bus", "lmp", "theta"],
                        zip(case.bus_ids, sol.lmps.tolist(), sol.theta.tolist())),
             _write_csv(out, "dispatch.csv", ["gen", "bus", "p"],
                        [(k, g.bus, v) for k, (g, v) in enumerate(zip(case.generators, sol.p.tolist()))])]
    return sol.to_dict(), files


def _cmd_uc(a, io, out):
    from .commitment import UcInstance, uc_bruteforce, uc_lagrangian
    inst = UcInstance.loads(io.text(a.instance))
    if a.bruteforce:
        sched = uc_bruteforce(inst)
    else:
        sched = uc_lagrangian(inst, iters=a.iters, levels=a.levels)
    (out / "schedule.csv").write_text(sched.to_csv(), encoding="utf-8")
    return sched.to_dict(), ["schedule.csv"]


def _cmd_dr(a, io, out):
    from .flexload import DrInstance, curtail_solve, dr_solve
    doc = io.json(a.instance)
    inst = DrInstance.from_dict(doc)
    if a.curtail is not None:
        res = curtail_solve(inst.users, a.curtail)
        return res.to_dict(), []
    res = dr_solve(inst, a.mode, max_iter=a.iters, tol=a.tol)
    files = [_write_csv(out, "prices.csv", ["period", "price", "supply"],
                        zip(range(inst.T), res.prices.tolist(), res.supply.tolist()))]
    return res.to_dict(), files


def _cmd_pev(a, io, out):
    from .flexload import PevFleet, pev_central, pev_distributed
    fleet = PevFleet.from_dict(io.json(a.fleet))
    files = []
    if a.method == "central":
        prof = pev_central(fleet)
    else:
        prof = pev_distributed(fleet, max_iters=a.iters, tol=a.tol)
        (out / "trace.csv").write_text(prof.trace_csv(), encoding="utf-8")
        files.append("trace.csv")
    files.append(_write_csv(out, "load.csv", ["slot", "base", "load"],
                            zip(range(fleet.T), fleet.demand.tolist(), prof.load.tolist())))
    return prof.to_dict(), files


# --------------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out-dir", default=".", help="directory for report.json and CSV files")
    common.add_argument("--quiet", action="store_true", help="do not print the report")

    ap = argparse.ArgumentParser(prog="gridkit", description="Power-grid modelling, monitoring and "
                                 "optimisation toolkit.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", metavar="COMMAND", required=True)

    def leaf(parent, name, handler, help_text):
        p = parent.add_parser(name, parents=[common], help=help_text, description=help_text)
        p.set_defaults(handler=handler)
        return p

    def group(name, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text)
        return p.add_subparsers(dest="action", metavar="ACTION", required=True)

    g = group("case", "case file utilities")
    p = leaf(g, "validate", _cmd_case_validate, "parse and check a case file")
    p.add_argument("--case", required=True, help="case JSON path or @case14")

    g = group("pf", "power flow")
    p = leaf(g, "dc", _cmd_pf_dc, "DC power flow")
    p.add_argument("--case", required=True, help="case JSON path or @case14")
    p.add_argument("--injections", help="JSON list (or {'p': list}) of bus injections in bus order")
    p.add_argument("--ref", type=int, help="reference bus id (default: slack)")
    p = leaf(g, "ac", _cmd_pf_ac, "AC power flow by Newton-Raphson")
    p.add_argument("--case", required=True, help="case JSON path or @case14")
    p.add_argument("--operating", help="operating-point JSON with generator set-points")
    p.add_argument("--tol", type=float, default=1e-8, help="mismatch tolerance (default 1e-8)")
    p.add_argument("--max-iter", type=int, default=20, help="Newton iteration limit (default 20)")

    g = group("se", "state estimation")
    p = leaf(g, "run", _cmd_se_run, "AC weighted least squares by Gauss-Newton")
    p.add_argument("--case", required=True, help="case JSON path or @case14")
    p.add_argument("--meas", required=True, help="measurement JSON list")
    p.add_argument("--tol", type=float, default=1e-10, help="step tolerance (default 1e-10)")
    p.add_argument("--max-iter", type=int, default=30, help="iteration limit (default 30)")
    for name, fn, text in (("baddata", _cmd_se_baddata, "chi-square test and largest normalized "
                            "residual removal on the DC model"),
                           ("attack", _cmd_se_attack, "stealth attack a = H c on the DC model")):
        p = leaf(g, name, fn, text)
        p.add_argument("--case", required=True, help="case JSON path or @case14")
        p.add_argument("--meas", required=True, help="measurement JSON list")
        p.add_argument("--alpha", type=float, default=0.01, help="chi-square false-alarm level (default 0.01)")
        p.add_argument("--lnrt", type=float, default=3.0, help="normalized residual threshold (default 3.0)")
        if name == "attack":
            p.add_argument("--attack", help="JSON list (or {'c': list}) of angle shifts, slack excluded")
            p.add_argument("--scale", type=float, default=0.1, help="std of random c (default 0.1)")
            p.add_argument("--seed", type=int, default=0, help="seed for random c (default 0)")
    p = leaf(g, "observe", _cmd_se_observe, "numerical and topological observability")
    p.add_argument("--case", required=True, help="case JSON path or @case14")
    p.add_argument("--meas", required=True, help="measurement JSON list")

    g = group("outage", "line-outage identification from angle changes")
    for method in ("omp", "exhaustive"):
        p = leaf(g, method, _cmd_outage, f"identify outaged lines ({method})")
        p.set_defaults(method=method)
        p.add_argument("--case", required=True, help="case JSON path or @case14")
        p.add_argument("--angles", help="JSON {'pre': list, 'post': list} of bus angles")
        p.add_argument("--simulate", help="comma-separated branch positions to remove")
        p.add_argument("--injections", help="bus injections for --simulate (default: loads at the slack)")
        p.add_argument("--internal", help="comma-separated internal bus ids (default: all)")
        p.add_argument("--k", type=int, default=None if method == "omp" else 1,
                       help="number of lines" + (" (default 1)" if method == "exhaustive" else ""))
        if method == "omp":
            p.add_argument("--threshold", type=float, help="stop when the residual norm drops below this")
        p.add_argument("--snr", type=float, help="add white noise at this SNR in dB")
        p.add_argument("--seed", type=int, default=0, help="noise seed (default 0)")

    g = group("signal", "waveform analysis")
    p = leaf(g, "phasor", _cmd_signal_phasor, "fundamental phasor by correlation")
    p.add_argument("--wave", required=True, help="CSV with header time,value")
    p.add_argument("--f0", type=float, default=60.0, help="nominal frequency in Hz (default 60)")
    p.add_argument("--start", type=int, default=0, help="first sample of the window (default 0)")
    p.add_argument("--cycles", type=int, help="window length in cycles (default: whole record)")
    p = leaf(g, "modes", _cmd_signal_modes, "Prony estimate of damped modes")
    p.add_argument("--wave", required=True, help="CSV with header time,value")
    p.add_argument("--order", type=int, required=True, help="linear prediction order")
    p.add_argument("--amp-tol", type=float, default=1e-9, help="relative amplitude cut-off (default 1e-9)")

    p = leaf(sub, "ed", _cmd_ed, "single-bus economic dispatch")
    p.add_argument("--units", required=True, help="JSON {'units': [{cost, p_min, p_max}], 'demand'}")
    p.add_argument("--demand", type=float, help="demand (overrides the file)")
    p.add_argument("--wind", type=float, help="wind forecast treated as negative load")
    p.add_argument("--wind-shape", type=float, help="Weibull shape of wind output")
    p.add_argument("--wind-scale", type=float, help="Weibull scale of wind output")
    p.add_argument("--eps", type=float, help="chance-constraint probability level")

    p = leaf(sub, "opf", _cmd_opf, "DC optimal power flow with LMPs")
    p.add_argument("--case", required=True, help="case JSON path or @case14")
    p.add_argument("--loads", help="JSON list of per-bus loads (default: case loads)")
    p.add_argument("--limits", help="JSON list of per-branch flow limits, null for none")
    p.add_argument("--angle-penalty", type=float, default=0.0, help="weight on squared angle differences")

    p = leaf(sub, "uc", _cmd_uc, "unit commitment by Lagrangian relaxation")
    p.add_argument("--instance", required=True, help="UC instance JSON")
    p.add_argument("--iters", type=int, default=500, help="subgradient iterations (default 500)")
    p.add_argument("--levels", type=int, default=21, help="output grid levels per unit (default 21)")
    p.add_argument("--bruteforce", action="store_true", help="enumerate all commitments instead")

    p = leaf(sub, "dr", _cmd_dr, "multi-user demand response")
    p.add_argument("--instance", required=True, help="DR instance JSON")
    p.add_argument("--mode", choices=("central", "dual"), default="central", help="solver (default central)")
    p.add_argument("--iters", type=int, default=20000, help="dual iteration limit (default 20000)")
    p.add_argument("--tol", type=float, default=1e-6, help="price change tolerance (default 1e-6)")
    p.add_argument("--curtail", type=float, help="solve single-period curtailment of this deficit")

    g = group("pev", "electric-vehicle valley filling")
    p = leaf(g, "central", _cmd_pev, "one QP over the whole fleet")
    p.set_defaults(method="central")
    p.add_argument("--fleet", required=True, help="fleet JSON")
    p = leaf(g, "distributed", _cmd_pev, "per-vehicle updates with price feedback")
    p.set_defaults(method="distributed")
    p.add_argument("--fleet", required=True, help="fleet JSON")
    p.add_argument("--iters", type=int, default=500, help="iteration limit (default 500)")
    p.add_argument("--tol", type=float, default=1e-6, help="profile change tolerance (default 1e-6)")
    return ap


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    out = Path(args.out_dir)
    io = _Inputs()
    t0 = time.perf_counter()
    status, message, files = 0, None, []
    try:
        out.mkdir(parents=True, exist_ok=True)
        result, files = args.handler(args, io, out)
    except _Failed as exc:
        status, message, result, files = 1, str(exc), exc.result, exc.files
    except (GridkitError, OSError, KeyError, TypeError, ValueError) as exc:
        status, message, result = 1, f"{type(exc).__name__}: {exc}", None
    report = {"version": REPORT_VERSION, "command": ["gridkit", *argv], "inputs": io.digests,
              "wall_time": time.perf_counter() - t0, "status": status, "error": message,
              "files": files, "result": result}
    text = json.dumps(_clean(json.loads(json.dumps(report, default=_jsonable))), indent=1)
    try:
        (out / "report.json").write_text(text + "\n", encoding="utf-8")
    except OSError as exc:
        print(f"gridkit: cannot write report: {exc}", file=sys.stderr)
        status = 1
    if message:
        print(f"gridkit: error: {message}", file=sys.stderr)
    if not args.quiet:
        print(text)
    return status


run = main

if __name__ == "__main__":
    sys.exit(main())
