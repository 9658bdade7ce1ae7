"""Trace, event and verdict emission: delimited files plus rendered figures.

CSV schema (fixed order): t, y_1..y_m, yref_1..yref_m, e_norm_1..e_norm_r,
psi_1..psi_r, k_1..k_r, v_1..v_m, u_1..u_m, kappa, sat_active.  Floats are
written with 17 significant digits; events go to a sidecar CSV.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .sim import BaselineTrace, Event, SimTrace

__all__ = [
    "trace_columns",
    "write_trace_csv",
    "read_trace_csv",
    "write_events_csv",
    "read_events_csv",
    "write_baseline_csv",
    "write_verdicts",
    "render_case_figures",
    "render_run_figures",
]

_FMT = "%.17g"


def trace_columns(r: int, m: int) -> list:
    cols = ["t"]
    cols += [f"y_{j + 1}" for j in range(m)]
    cols += [f"yref_{j + 1}" for j in range(m)]
    cols += [f"e_norm_{i + 1}" for i in range(r)]
    cols += [f"psi_{i + 1}" for i in range(r)]
    cols += [f"k_{i + 1}" for i in range(r)]
    cols += [f"v_{j + 1}" for j in range(m)]
    cols += [f"u_{j + 1}" for j in range(m)]
    cols += ["kappa", "sat_active"]
    return cols


def write_trace_csv(trace: SimTrace, path) -> None:
    path = Path(path)
    r, m = trace.r, trace.m
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(trace_columns(r, m))
        for i in range(trace.t.size):
            row = [_FMT % trace.t[i]]
            row += [_FMT % x for x in trace.y[i]]
            row += [_FMT % x for x in trace.yref[i]]
            row += [_FMT % x for x in trace.e_norms[i]]
            row += [_FMT % x for x in trace.psi[i]]
            row += [_FMT % x for x in trace.k[i]]
            row += [_FMT % x for x in trace.v[i]]
            row += [_FMT % x for x in trace.u[i]]
            row += [_FMT % trace.kappa[i], "1" if trace.sat_active[i] else "0"]
            w.writerow(row)


def read_trace_csv(path, events_path=None, rel_tol: float = 1e-10,
                   term_reason: str = "completed") -> SimTrace:
    """Rebuild a trace from its CSV (and events sidecar when present)."""
    path = Path(path)
    with path.open("r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        data = np.array([[float(x) for x in row] for row in reader])
    m = sum(1 for c in header if c.startswith("y_"))
    r = sum(1 for c in header if c.startswith("psi_"))
    expect = trace_columns(r, m)
    if header != expect:
        raise ValueError(f"unexpected trace columns: {header}")
    idx = 0

    def take(n):
        nonlocal idx
        block = data[:, idx:idx + n]
        idx += n
        return block

    t = take(1)[:, 0]
    y = take(m)
    yref = take(m)
    e_norms = take(r)
    psi = take(r)
    k = take(r)
    v = take(m)
    u = take(m)
    kappa = take(1)[:, 0]
    sat_active = take(1)[:, 0] > 0.5
    events = []
    if events_path is None:
        cand = path.with_suffix(".events.csv")
        events_path = cand if cand.exists() else None
    if events_path is not None:
        events = read_events_csv(events_path)
    return SimTrace(t=t, y=y, yref=yref, e_norms=e_norms, psi=psi, k=k,
                    v=v, u=u, kappa=kappa, sat_active=sat_active,
                    events=events, term_reason=term_reason, rel_tol=rel_tol)


def write_events_csv(events, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "kind", "payload"])
        for e in events:
            w.writerow([_FMT % e.t, e.kind, json.dumps(e.payload, sort_keys=True)])


def read_events_csv(path) -> list:
    out = []
    with Path(path).open("r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            out.append(Event(t=float(row[0]), kind=row[1],
                             payload=json.loads(row[2]) if row[2] else {}))
    return out


def write_baseline_csv(trace: BaselineTrace, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "y_1", "yref_1", "e_norm_1", "u_1"])
        for i in range(trace.t.size):
            w.writerow([_FMT % trace.t[i], _FMT % trace.y[i][0],
                        _FMT % trace.yref[i][0], _FMT % trace.e_norm[i],
                        _FMT % trace.u[i]])


def write_verdicts(verdicts, txt_path, json_path) -> None:
    """One text block per check plus a machine-readable summary."""
    lines = []
    for v in verdicts:
        lines.append(f"check: {v.check_name}")
        lines.append(f"pass: {v.passed}")
        lines.append(f"worst_margin: {_FMT % v.worst_margin}")
        lines.append(f"t_worst: {_FMT % v.t_worst}")
        if v.details:
            lines.append(f"details: {v.details}")
        lines.append("")
    Path(txt_path).write_text("\n".join(lines), encoding="utf-8")
    payload = {
        "all_passed": all(v.passed for v in verdicts),
        "checks": [
            {
                "name": v.check_name,
                "pass": v.passed,
                "worst_margin": v.worst_margin,
                "t_worst": v.t_worst,
                "details": v.details,
            }
            for v in verdicts
        ],
    }
    Path(json_path).write_text(json.dumps(payload, indent=2), encoding="utf-8")


def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def render_case_figures(trace: SimTrace, baseline: BaselineTrace, sat_level: float,
                        phi_fn, out_dir, stem: str) -> list:
    """Error-vs-funnel overlay and input-vs-bounds panels for a case run."""
    plt = _pyplot()
    out_dir = Path(out_dir)
    paths = []

    fig, ax = plt.subplots(figsize=(7.0, 3.4))
    ax.plot(trace.t, trace.psi[:, 0], "b-", label="funnel radius")
    ax.plot(trace.t, [1.0 / phi_fn(t) for t in trace.t], "b--",
            label="desired shape", lw=1.0)
    ax.plot(trace.t, trace.e_norms[:, 0], "r-", label="|error|")
    if baseline is not None:
        ax.plot(baseline.t, baseline.e_norm, "g-", lw=1.0, label="|error| baseline")
    ax.set_xlabel("t [s]")
    ax.set_ylabel("error / funnel")
    ax.legend(loc="upper right", fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    p = out_dir / f"{stem}_funnel.svg"
    fig.savefig(p)
    plt.close(fig)
    paths.append(p)

    fig, ax = plt.subplots(figsize=(7.0, 3.4))
    ax.plot(trace.t, trace.u[:, 0], "r-", label="input (saturated)")
    if baseline is not None:
        ax.plot(baseline.t, baseline.u, "g-", lw=1.0, label="input baseline")
    if math.isfinite(sat_level):
        ax.axhline(sat_level, color="k", ls=":", lw=1.0)
        ax.axhline(-sat_level, color="k", ls=":", lw=1.0)
    ax.set_xlabel("t [s]")
    ax.set_ylabel("u")
    ax.legend(loc="upper right", fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    p = out_dir / f"{stem}_input.svg"
    fig.savefig(p)
    plt.close(fig)
    paths.append(p)
    return paths


def render_run_figures(trace: SimTrace, sat_level: float, out_dir, stem: str) -> list:
    """Per-level error/funnel overlay and the input panel for a plain run."""
    plt = _pyplot()
    out_dir = Path(out_dir)
    paths = []

    r = trace.r
    fig, axes = plt.subplots(r, 1, figsize=(7.0, 2.2 * r), sharex=True, squeeze=False)
    for i in range(r):
        ax = axes[i, 0]
        ax.plot(trace.t, trace.psi[:, i], "b-", label=f"psi_{i + 1}")
        ax.plot(trace.t, trace.e_norms[:, i], "r-", label=f"|e_{i + 1}|")
        ax.legend(loc="upper right", fontsize=8)
        ax.grid(alpha=0.3)
    axes[-1, 0].set_xlabel("t [s]")
    fig.tight_layout()
    p = out_dir / f"{stem}_funnel.svg"
    fig.savefig(p)
    plt.close(fig)
    paths.append(p)

    fig, ax = plt.subplots(figsize=(7.0, 3.0))
    for j in range(trace.m):
        ax.plot(trace.t, trace.u[:, j], label=f"u_{j + 1}")
    if math.isfinite(sat_level):
        ax.axhline(sat_level, color="k", ls=":", lw=1.0)
        ax.axhline(-sat_level, color="k", ls=":", lw=1.0)
    ax.set_xlabel("t [s]")
    ax.set_ylabel("u")
    ax.legend(loc="upper right", fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    p = out_dir / f"{stem}_input.svg"
    fig.savefig(p)
    plt.close(fig)
    paths.append(p)
    return paths
