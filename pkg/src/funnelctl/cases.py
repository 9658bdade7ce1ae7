"""Benchmark case presets and the replication driver.

``case1``: mass-on-car on the inclined ramp (order 2), box saturation at
10, compared against the order-2 fixed-funnel baseline.  ``case2``: flat
ramp (order 3), box saturation at 8, compared against the order-3
baseline run without saturation.  ``blowup``: the escape-time oracle
battery on the quadratic prototype.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

from . import config as cfgmod
from . import controller as ctl
from . import report, verify
from .config import RunConfig
from .sim import integrate, integrate_baseline, saturation_intervals

__all__ = ["case1_config", "case2_config", "replicate", "ReplicateResult"]

CASE_IDS = ("case1", "case2", "blowup")


def case1_config(rel_tol: float = 1e-8) -> RunConfig:
    a1, a2 = 1.5, 0.9 * 1.5
    return RunConfig(
        plant={"kind": "mass_on_car", "m1": 4.0, "m2": 1.0, "k": 2.0, "d": 1.0,
               "theta": math.pi / 4, "init": [0.0, 0.0, 0.0, 0.0]},
        controller={"alpha": [a1, a2], "beta": [0.15, 0.5 * a2], "p": [1.1],
                    "psi0": [4.1, 2.0], "surjection": {"kind": "neg_s2_cos"}},
        saturation={"kind": "box", "level": 10.0},
        reference={"kind": "cosine", "amplitude": 1.0},
        sim={"t_end": 15.0, "rel_tol": rel_tol, "abs_tol": 1e-8,
             "record_stride": 0.01},
        output={},
    )


def case1_baseline_phi():
    """Gain schedule matched to the case-1 funnel decay: d/dt(1/phi) = -alpha_1/phi + beta_1."""
    return (4.0, 1.5, 0.1)


def case2_config(rel_tol: float = 1e-8) -> RunConfig:
    a1 = 1.5
    a2 = 0.9 * a1
    a3 = 0.9 * a2
    return RunConfig(
        plant={"kind": "mass_on_car", "m1": 4.0, "m2": 1.0, "k": 2.0, "d": 1.0,
               "theta": 0.0, "init": [0.0, 0.0, 0.0, 0.0]},
        controller={"alpha": [a1, a2, a3], "beta": [0.1, 0.5 * a2, 0.5 * a3],
                    "p": [1.1, 1.1], "psi0": [3.1, 1.6, 1.6],
                    "surjection": {"kind": "neg_s2_cos"}},
        saturation={"kind": "box", "level": 8.0},
        reference={"kind": "cosine", "amplitude": 1.0},
        sim={"t_end": 15.0, "rel_tol": rel_tol, "abs_tol": 1e-8,
             "record_stride": 0.01},
        output={},
    )


def case2_baseline_phi():
    return (3.0, 1.0, 0.1)


@dataclass
class ReplicateResult:
    case_id: str
    exit_code: int
    verdicts: list
    trace: object = None
    baseline: object = None
    baseline_max_u: float = float("nan")
    sat_intervals: list = field(default_factory=list)
    files: list = field(default_factory=list)


def _baseline_fn(case_id: str, params):
    n = params.surjection
    if case_id == "case1":
        a, b, c = case1_baseline_phi()
        return lambda t, st: ctl.baseline_r2(
            st[0, 0], st[1, 0], ctl.baseline_phi(t, a, b, c), n)
    a, b, c = case2_baseline_phi()
    return lambda t, st: ctl.baseline_r3(
        st[0, 0], st[1, 0], st[2, 0], ctl.baseline_phi(t, a, b, c), n)


def replicate(case_id: str, out_dir=None, figures: bool = True,
              rel_tol: float = 1e-8) -> ReplicateResult:
    """Run one benchmark case end to end (simulation, checks, emission).

    Exit code 0 when every check passes, 2 on a check failure, 3 when the
    funnel-controller run terminates early.  Baseline faults are recorded
    as events, not errors.
    """
    if case_id not in CASE_IDS:
        raise ValueError(f"unknown case {case_id!r}; choose from {CASE_IDS}")
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    if case_id == "blowup":
        verdict = verify.blowup_oracle([0.25, 0.81, 1.0, 1.5])
        files = []
        if out_dir is not None:
            report.write_verdicts([verdict], out_dir / "verdicts.txt",
                                  out_dir / "verdicts.json")
            files = [out_dir / "verdicts.txt", out_dir / "verdicts.json"]
        return ReplicateResult(case_id=case_id,
                               exit_code=0 if verdict.passed else 2,
                               verdicts=[verdict], files=files)

    rc = case1_config(rel_tol) if case_id == "case1" else case2_config(rel_tol)
    params = cfgmod.build_params(rc)
    plant = cfgmod.build_plant(rc)
    sat = cfgmod.build_saturation(rc)
    ref = cfgmod.build_reference(rc, plant.m)
    sim_cfg = cfgmod.build_sim_config(rc)
    init = cfgmod.initial_state(rc, plant)

    trace = integrate(plant, params, sat, ref, init, sim_cfg)
    baseline = integrate_baseline(plant, _baseline_fn(case_id, params), ref,
                                  init, sim_cfg)
    baseline_max_u = float(abs(baseline.u).max())

    verdicts = [
        verify.check_funnel_membership(trace, params),
        verify.check_lower_and_ratio_bounds(trace, params),
        verify.check_recovery(trace, params),
        _input_bound_verdict(trace, sat.level),
    ]
    if case_id == "case2":
        verdicts.append(_baseline_exceeds_verdict(baseline, sat.level))

    files = []
    if out_dir is not None:
        stem = case_id
        report.write_trace_csv(trace, out_dir / f"{stem}.csv")
        report.write_events_csv(trace.events, out_dir / f"{stem}.events.csv")
        report.write_baseline_csv(baseline, out_dir / f"{stem}_baseline.csv")
        report.write_verdicts(verdicts, out_dir / "verdicts.txt",
                              out_dir / "verdicts.json")
        files = [out_dir / f"{stem}.csv", out_dir / f"{stem}.events.csv",
                 out_dir / f"{stem}_baseline.csv", out_dir / "verdicts.txt",
                 out_dir / "verdicts.json"]
        if figures:
            a, b, c = (case1_baseline_phi() if case_id == "case1"
                       else case2_baseline_phi())
            files += report.render_case_figures(
                trace, baseline, sat.level,
                lambda t: ctl.baseline_phi(t, a, b, c), out_dir, stem)

    if trace.term_reason != "completed":
        code = 3
    elif all(v.passed for v in verdicts):
        code = 0
    else:
        code = 2
    return ReplicateResult(case_id=case_id, exit_code=code, verdicts=verdicts,
                           trace=trace, baseline=baseline,
                           baseline_max_u=baseline_max_u,
                           sat_intervals=saturation_intervals(trace),
                           files=files)


def _input_bound_verdict(trace, level: float) -> verify.VerdictReport:
    import numpy as np

    mags = np.max(np.abs(trace.u), axis=1)
    j = int(np.argmax(mags))
    worst = float(level - mags[j])
    return verify.VerdictReport(
        check_name="input_bound",
        passed=worst >= 0.0,
        worst_margin=worst,
        t_worst=float(trace.t[j]),
        details=f"max |u| = {mags[j]:.6g} vs level {level:.6g}",
    )


def _baseline_exceeds_verdict(baseline, level: float) -> verify.VerdictReport:
    import numpy as np

    j = int(np.argmax(np.abs(baseline.u)))
    peak = float(abs(baseline.u[j]))
    return verify.VerdictReport(
        check_name="baseline_input_exceeds_level",
        passed=peak > level,
        worst_margin=peak - level,
        t_worst=float(baseline.t[j]),
        details=f"baseline max |u| = {peak:.6g} vs level {level:.6g}",
    )
