"""Command-line front end.

Subcommands: ``replicate`` (benchmark cases), ``run`` (configured
simulation plus checks), ``sweep`` (grid of config overrides) and
``verify`` (re-check a written trace).  Exit codes: 0 all requested
checks pass, 2 check failure, 3 unexpected blow-up or fault, 4 config
error.  ``FUNNELCTL_PARALLEL`` sets the sweep fan-out degree.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from . import cases, config as cfgmod, report, verify
from .errors import ConfigInvalid, InitialConditionViolation
from .sim import integrate, saturation_intervals

_CHECK_FNS = {
    "membership": verify.check_funnel_membership,
    "lower_ratio": verify.check_lower_and_ratio_bounds,
    "recovery": verify.check_recovery,
}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigInvalid as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 4
    except InitialConditionViolation as exc:
        print(f"config error (initial condition): {exc}", file=sys.stderr)
        return 4


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="funnelctl",
                                description="input-constrained funnel control toolkit")
    sub = p.add_subparsers(dest="cmd", required=True)

    rep = sub.add_parser("replicate", help="run a benchmark case")
    rep.add_argument("case", choices=cases.CASE_IDS)
    rep.add_argument("--out", default=None, help="output directory")
    rep.add_argument("--no-figures", action="store_true")
    rep.add_argument("--rel-tol", type=float, default=1e-8)
    rep.set_defaults(fn=_cmd_replicate)

    run = sub.add_parser("run", help="run a configured simulation plus checks")
    run.add_argument("--config", required=True)
    run.add_argument("--out", required=True)
    run.add_argument("--no-figures", action="store_true")
    run.set_defaults(fn=_cmd_run)

    sw = sub.add_parser("sweep", help="run a grid of config overrides")
    sw.add_argument("--config", required=True)
    sw.add_argument("--grid", required=True,
                    help="grid spec, e.g. 'saturation.level=2,5,10;sim.rel_tol=1e-6,1e-8'")
    sw.add_argument("--out", required=True)
    sw.set_defaults(fn=_cmd_sweep)

    ver = sub.add_parser("verify", help="re-check a written trace")
    ver.add_argument("--trace", required=True)
    ver.add_argument("--params", required=True, help="config file naming the controller")
    ver.add_argument("--out", default=None)
    ver.set_defaults(fn=_cmd_verify)
    return p


def _cmd_replicate(args) -> int:
    res = cases.replicate(args.case, out_dir=args.out,
                          figures=not args.no_figures, rel_tol=args.rel_tol)
    for v in res.verdicts:
        print(v)
    if res.sat_intervals:
        spans = ", ".join(f"[{a:.4f}, {b:.4f}]" for a, b in res.sat_intervals)
        print(f"saturation active on: {spans}")
    return res.exit_code


def _run_once(rc, out_dir=None, figures=True):
    """Integrate one configured run and evaluate its requested checks."""
    params = cfgmod.build_params(rc)
    plant = cfgmod.build_plant(rc)
    sat = cfgmod.build_saturation(rc)
    ref = cfgmod.build_reference(rc, plant.m)
    sim_cfg = cfgmod.build_sim_config(rc)
    init = cfgmod.initial_state(rc, plant)
    trace = integrate(plant, params, sat, ref, init, sim_cfg)
    verdicts = []
    for name in rc.checks:
        if name not in _CHECK_FNS:
            raise ConfigInvalid(f"unknown check {name!r}")
        verdicts.append(_CHECK_FNS[name](trace, params))
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        report.write_trace_csv(trace, out_dir / "trace.csv")
        report.write_events_csv(trace.events, out_dir / "trace.events.csv")
        report.write_verdicts(verdicts, out_dir / "verdicts.txt",
                              out_dir / "verdicts.json")
        if figures and rc.output.get("figures", True):
            report.render_run_figures(trace, sat.theta, out_dir, "run")
    return trace, verdicts, sat


def _cmd_run(args) -> int:
    rc = cfgmod.load_config(args.config)
    trace, verdicts, _ = _run_once(rc, out_dir=args.out,
                                   figures=not args.no_figures)
    for v in verdicts:
        print(v)
    if trace.term_reason != "completed":
        print(f"terminated early: {trace.term_reason}", file=sys.stderr)
        return 3
    return 0 if all(v.passed for v in verdicts) else 2


def _parse_scalar(token: str):
    val = yaml.safe_load(token.strip())
    if isinstance(val, str):
        try:
            return float(val)
        except ValueError:
            return val
    return val


def parse_grid(spec: str):
    """Parse 'a.b=1,2;c.d=x,y' into an ordered list of (path, values).

    Paths are dotted; an integer path segment indexes into a list, so
    vector entries like 'controller.psi0.0' are sweepable scalars.
    """
    fields = []
    spec = spec.strip()
    if not spec:
        return fields
    for part in spec.split(";"):
        part = part.strip()
        if not part:
            continue
        if "=" not in part:
            raise ConfigInvalid(f"bad grid field {part!r}")
        path, _, vals = part.partition("=")
        values = [_parse_scalar(v) for v in vals.split(",") if v != ""]
        if not values:
            raise ConfigInvalid(f"grid field {path!r} has no values")
        fields.append((path.strip(), values))
    return fields


def _apply_override(data, path: str, value):
    keys = path.split(".")
    node = data
    for key in keys[:-1]:
        if isinstance(node, list) and key.lstrip("-").isdigit():
            node = node[int(key)]
        elif isinstance(node, dict) and key in node:
            node = node[key]
        else:
            raise ConfigInvalid(f"grid path {path!r} not found in config")
    last = keys[-1]
    if isinstance(node, list) and last.lstrip("-").isdigit():
        node[int(last)] = value
    elif isinstance(node, dict):
        node[last] = value
    else:
        raise ConfigInvalid(f"grid path {path!r} not found in config")


def _sweep_cell(payload):
    """Worker for one grid point; returns a flat summary row."""
    base_dict, overrides = payload
    row = {path: val for path, val in overrides}
    data = json.loads(json.dumps(base_dict))
    try:
        for path, val in overrides:
            _apply_override(data, path, val)
        rc = cfgmod.parse_config(yaml.safe_dump(data))
        trace, verdicts, sat = _run_once(rc, out_dir=None, figures=False)
    except (ConfigInvalid, InitialConditionViolation) as exc:
        row.update(status="config_error", detail=str(exc), passed=False)
        return row
    ratios = trace.e_norms / trace.psi
    v_norms = np.linalg.norm(trace.v, axis=1)
    duty = _saturation_duty(trace)
    row.update(
        status=trace.term_reason,
        passed=bool(trace.term_reason == "completed"
                    and all(v.passed for v in verdicts)),
        max_err_ratio=float(ratios.max()),
        max_v_norm=float(v_norms.max()),
        sat_duty=duty,
        detail="",
    )
    return row


def _saturation_duty(trace) -> float:
    """Fraction of trace time with active saturation."""
    total = float(trace.t[-1] - trace.t[0])
    if total <= 0:
        return 0.0
    active = sum(b - a for a, b in saturation_intervals(trace))
    return float(active / total)


def _cmd_sweep(args) -> int:
    rc = cfgmod.load_config(args.config)
    fields = parse_grid(args.grid)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    base = rc.to_dict()

    names = [path for path, _ in fields]
    combos = list(itertools.product(*[vals for _, vals in fields])) if fields else []
    payloads = [(base, list(zip(names, combo))) for combo in combos]

    degree = int(os.environ.get("FUNNELCTL_PARALLEL", "1"))
    if degree > 1 and payloads:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=degree) as pool:
            rows = list(pool.map(_sweep_cell, payloads))
    else:
        rows = [_sweep_cell(p) for p in payloads]

    cols = names + ["status", "passed", "max_err_ratio", "max_v_norm",
                    "sat_duty", "detail"]
    with (out_dir / "sweep.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for row in rows:
            w.writerow([row.get(c, "") for c in cols])
    print(f"wrote {len(rows)} rows to {out_dir / 'sweep.csv'}")
    return 0


def _cmd_verify(args) -> int:
    rc = cfgmod.load_config(args.params)
    params = cfgmod.build_params(rc)
    sim_cfg = cfgmod.build_sim_config(rc)
    trace = report.read_trace_csv(args.trace, rel_tol=sim_cfg.rel_tol)
    verdicts = []
    for name in rc.checks:
        if name not in _CHECK_FNS:
            raise ConfigInvalid(f"unknown check {name!r}")
        verdicts.append(_CHECK_FNS[name](trace, params))
    for v in verdicts:
        print(v)
    if args.out:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        report.write_verdicts(verdicts, out_dir / "verdicts.txt",
                              out_dir / "verdicts.json")
    return 0 if all(v.passed for v in verdicts) else 2


if __name__ == "__main__":
    sys.exit(main())
