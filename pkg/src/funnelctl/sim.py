"""Closed-loop assembly and adaptive integration.

The plant state is augmented with the funnel radii and integrated with an
embedded Runge-Kutta 4(5) pair.  Step control is barrier aware: a trial
step is rejected (halved) when the embedded error fails, when any
post-step error-to-radius ratio closes too much of its remaining gap to
the barrier, or when the controller algebra faults at a stage.  Saturation
toggles are localized by bisection before a row is committed, so interval
endpoints in the trace are trustworthy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import controller as ctl
from .errors import (ConfigInvalid, FunnelViolation, InitialConditionViolation,
                     SingularKappa)
from .params import FunnelParams, require_valid

__all__ = [
    "SimConfig",
    "Event",
    "SimTrace",
    "BaselineTrace",
    "OdeResult",
    "closed_loop_rhs",
    "integrate",
    "integrate_ode",
    "integrate_baseline",
    "saturation_intervals",
]

# Dormand-Prince 5(4) tableau; the embedded difference row gives the local
# error estimate of the 5th order propagating solution.
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = (
    np.zeros(0),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
    np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]),
)
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_ERR = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920,
                 -17253 / 339200, 22 / 525, -1 / 40])

_EVENT_TOL = 1e-9          # bisection resolution for saturation toggles (s)
_PSI_FLOOR_TOL = 1e-9      # tolerated numeric dip below the funnel floor


@dataclass
class SimConfig:
    """Integrator settings; defaults mirror a tight ode45-style setup."""

    t_end: float
    rel_tol: float = 1e-10
    abs_tol: float = 1e-8
    h_init: float = 1e-3
    h_min: float = 1e-12
    h_max: float = 0.1
    barrier_margin: float = 0.1
    blowup_norm: float = 1e6
    record_stride: float = 0.01

    def validate(self) -> None:
        if self.t_end < 0:
            raise ConfigInvalid("t_end must be nonnegative")
        if self.rel_tol <= 0 or self.abs_tol <= 0:
            raise ConfigInvalid("tolerances must be positive")
        if not self.h_min < self.h_init <= self.h_max:
            raise ConfigInvalid("need h_min < h_init <= h_max")
        if not 0.0 < self.barrier_margin < 1.0:
            raise ConfigInvalid("barrier_margin must lie in (0, 1)")
        if self.blowup_norm <= 0 or self.record_stride <= 0:
            raise ConfigInvalid("blowup_norm and record_stride must be positive")


@dataclass
class Event:
    t: float
    kind: str        # SatOn | SatOff | Blowup | FunnelFault
    payload: dict = field(default_factory=dict)


@dataclass(eq=False)
class SimTrace:
    """Time-indexed record of all closed-loop signals plus event annotations.

    Rows are committed only after step acceptance, so every row satisfies
    ||e_i|| < psi_i.  ``e_norms`` holds the cascade error norms ||e_i||.
    """

    t: np.ndarray           # (n,)
    y: np.ndarray           # (n, m)
    yref: np.ndarray        # (n, m)
    e_norms: np.ndarray     # (n, r)
    psi: np.ndarray         # (n, r)
    k: np.ndarray           # (n, r)
    v: np.ndarray           # (n, m)
    u: np.ndarray           # (n, m)
    kappa: np.ndarray       # (n,)
    sat_active: np.ndarray  # (n,) bool
    events: list
    term_reason: str        # completed | blowup | funnel_fault
    rel_tol: float          # integrator setting, consumed by check tolerances

    @property
    def r(self) -> int:
        return self.psi.shape[1]

    @property
    def m(self) -> int:
        return self.y.shape[1]


@dataclass(eq=False)
class BaselineTrace:
    """Trace of a fixed-funnel baseline run (single output)."""

    t: np.ndarray
    y: np.ndarray
    yref: np.ndarray
    e_norm: np.ndarray
    u: np.ndarray
    events: list
    term_reason: str


def closed_loop_rhs(plant, params: FunnelParams, sat, ref, aug_state, t,
                    eta_guard: float = 0.0):
    """Derivative of the augmented state (plant_state, psi) plus the controller evaluation.

    Propagates FunnelViolation / SingularKappa from the controller algebra.
    """
    n = plant.state_dim
    x = aug_state[:n]
    psi = aug_state[n:]
    stack = plant.outputs(x) - ref.stack(t, plant.r)
    ev = ctl.evaluate(params, sat, stack, psi, eta_guard)
    dx = plant.rhs(x, ev.u)
    return np.concatenate([dx, ev.psi_dot]), ev


def _stage_rhs(plant, params, sat, ref, aug, t, eta_guard):
    """Derivative only, for integrator stages (skips the evaluation record)."""
    n = plant.state_dim
    x = aug[:n]
    psi = aug[n:]
    stack = plant.outputs(x)
    stack -= ref.stack(t, plant.r)
    e, k = ctl.error_cascade(stack, psi)
    v = params.surjection(float(k[-1])) * e[-1]
    u, kappa = sat.apply(v)
    e_r_norm = math.sqrt(float(e[-1] @ e[-1]))
    psi_dot = ctl.funnel_rhs(psi, params, e_r_norm, kappa, eta_guard)
    out = np.empty(aug.size)
    out[:n] = plant.rhs(x, u)
    out[n:] = psi_dot
    return out


class _Stepper:
    """Embedded RK 4(5) machinery over a derivative callback f(t, x)."""

    def __init__(self, f, rel_tol, abs_tol):
        self.f = f
        self.rel_tol = rel_tol
        self.abs_tol = abs_tol

    def _stages(self, t, x, h):
        k = np.empty((7, x.size))
        k[0] = self.f(t, x)
        for i in range(1, 7):
            xi = x + h * (_A[i] @ k[:i])
            k[i] = self.f(t + _C[i] * h, xi)
        return k

    def trial(self, t, x, h):
        """One trial step; returns (x_new, err_norm).  Stage faults propagate."""
        k = self._stages(t, x, h)
        x_new = x + h * (_B5 @ k)
        err_vec = h * (_ERR @ k)
        scale = self.abs_tol + self.rel_tol * np.maximum(np.abs(x), np.abs(x_new))
        err = math.sqrt(float(np.mean((err_vec / scale) ** 2)))
        return x_new, err

    def fixed(self, t, x, h):
        """Single 5th order step without error control (used by event bisection)."""
        if h == 0.0:
            return x.copy()
        k = self._stages(t, x, h)
        return x + h * (_B5 @ k)


def _grow(h, err, h_max):
    if err == 0.0:
        fac = 5.0
    else:
        fac = min(5.0, max(0.2, 0.9 * err ** -0.2))
    return min(h * fac, h_max)


def integrate(plant, params: FunnelParams, sat, ref, init, cfg: SimConfig) -> SimTrace:
    """Integrate the closed loop from the plant state ``init`` up to cfg.t_end.

    Rejects trial steps on embedded-error failure, on any stage- or
    endpoint-level funnel fault, and on gap-closure beyond the barrier
    margin; rejection halves the step.  Terminates early with a Blowup
    event (state norm above cfg.blowup_norm, or step underflow while the
    error test still fails) or a FunnelFault event (step underflow while
    the controller algebra keeps faulting).
    """
    cfg.validate()
    require_valid(params)
    if plant.r != params.r or plant.m != params.m:
        raise ConfigInvalid(
            f"plant/controller dimension mismatch: plant r={plant.r} m={plant.m}, "
            f"controller r={params.r} m={params.m}")
    init = np.asarray(init, dtype=float)
    if init.shape != (plant.state_dim,):
        raise ConfigInvalid(f"init must have length {plant.state_dim}")

    n = plant.state_dim
    x = np.concatenate([init, params._psi0_arr])
    t = 0.0
    guard = {"eta": 0.0}

    def f(tt, xx):
        return _stage_rhs(plant, params, sat, ref, xx, tt, guard["eta"])

    def eval_at(tt, xx):
        _, ev = closed_loop_rhs(plant, params, sat, ref, xx, tt, guard["eta"])
        return ev

    try:
        ev = eval_at(t, x)
    except FunnelViolation as exc:
        raise InitialConditionViolation(
            f"initial cascade error outside initial funnel: {exc}") from exc

    k_cap = float(ev.k[-1])
    if math.isfinite(sat.theta):
        guard["eta"] = sat.theta / (2.0 * max(params.surjection.sup_abs(k_cap), 1e-300))

    stepper = _Stepper(f, cfg.rel_tol, cfg.abs_tol)
    floor = params.psi_floor

    rows = []
    events = []

    def push_row(tt, xx, evv):
        psi = xx[n:]
        rows.append((
            tt,
            plant.outputs(xx[:n])[0].copy(),
            ref.eval(tt, 0),
            np.sqrt(np.einsum("ij,ij->i", evv.e_cascade, evv.e_cascade)),
            psi.copy(),
            evv.k.copy(),
            evv.v.copy(),
            evv.u.copy(),
            evv.kappa,
            evv.sat_active,
        ))

    push_row(t, x, ev)
    next_rec = cfg.record_stride
    term = "completed"
    h = min(cfg.h_init, cfg.h_max)
    t_stop = cfg.t_end * (1.0 - 1e-15)

    while t < t_stop:
        h = min(h, cfg.t_end - t)
        # trial step; classify any rejection
        rejection = None       # (reason, detail) when the trial fails
        x_new = ev_new = None
        err = 0.0
        try:
            x_new, err = stepper.trial(t, x, h)
        except (FunnelViolation, SingularKappa) as exc:
            rejection = ("funnel_fault", str(exc))
        if rejection is None:
            if err > 1.0 or not np.all(np.isfinite(x_new)):
                rejection = ("blowup", f"error test failed at h = {h:.3g}")
            else:
                try:
                    ev_new = eval_at(t + h, x_new)
                except (FunnelViolation, SingularKappa) as exc:
                    rejection = ("funnel_fault", str(exc))
                else:
                    if not _barrier_guard(ev, ev_new, x[n:], x_new[n:], floor,
                                          cfg.barrier_margin):
                        rejection = ("funnel_fault", "barrier margin guard")
        if rejection is not None:
            if h / 2.0 < cfg.h_min:
                if rows[-1][0] != t:
                    push_row(t, x, ev)
                kind = "Blowup" if rejection[0] == "blowup" else "FunnelFault"
                events.append(Event(t, kind, {"detail": rejection[1]}))
                term = rejection[0]
                break
            h /= 2.0
            continue

        if ev_new.sat_active != ev.sat_active:
            located = _bisect_toggle(stepper, eval_at, t, x, ev.sat_active, h)
            if located is not None:
                t_star, x_star, ev_star = located
                kind = "SatOn" if ev_star.sat_active else "SatOff"
                events.append(Event(t_star, kind, {
                    "v_norm": float(np.linalg.norm(ev_star.v)),
                    "kappa": ev_star.kappa,
                }))
                t, x, ev = t_star, x_star, ev_star
                push_row(t, x, ev)
                next_rec = (math.floor(t / cfg.record_stride) + 1) * cfg.record_stride
                k_cap = max(k_cap, float(ev.k[-1]))
                if math.isfinite(sat.theta):
                    guard["eta"] = sat.theta / (2.0 * max(
                        params.surjection.sup_abs(k_cap), 1e-300))
                continue

        t = t + h
        x = x_new
        ev = ev_new
        k_cap = max(k_cap, float(ev.k[-1]))
        if math.isfinite(sat.theta):
            guard["eta"] = sat.theta / (2.0 * max(params.surjection.sup_abs(k_cap), 1e-300))
        if float(np.linalg.norm(x)) > cfg.blowup_norm:
            push_row(t, x, ev)
            events.append(Event(t, "Blowup", {"state_norm": float(np.linalg.norm(x))}))
            term = "blowup"
            break
        if t >= next_rec * (1.0 - 1e-12) or t >= cfg.t_end * (1.0 - 1e-15):
            push_row(t, x, ev)
            next_rec = (math.floor(t / cfg.record_stride) + 1) * cfg.record_stride
        h = _grow(h, err, cfg.h_max)

    return _assemble_trace(rows, events, term, cfg.rel_tol)


def _barrier_guard(ev_old, ev_new, psi_old, psi_new, floor, margin):
    """Accept the step only if no error closes too much of its barrier gap.

    ratio_new must stay below 1 - margin * (1 - ratio_old) at every level,
    and the radii must not dip below their floors beyond tolerance.
    """
    if np.any(psi_new < floor - (_PSI_FLOOR_TOL + _PSI_FLOOR_TOL * floor)):
        return False
    norms_old = np.sqrt(np.einsum("ij,ij->i", ev_old.e_cascade, ev_old.e_cascade))
    norms_new = np.sqrt(np.einsum("ij,ij->i", ev_new.e_cascade, ev_new.e_cascade))
    ratio_old = norms_old / psi_old
    ratio_new = norms_new / psi_new
    limit = 1.0 - margin * (1.0 - ratio_old)
    return bool(np.all(ratio_new <= limit))


def _bisect_toggle(stepper, eval_at, t0, x0, active0, h):
    """Locate a saturation toggle inside an accepted step.

    Bisects on sub-steps taken from (t0, x0); returns (t, x, ev) for the
    earliest state past the toggle, or None when refinement fails (the
    caller then commits the full step without an event).
    """
    lo, hi = 0.0, h
    try:
        while hi - lo > _EVENT_TOL:
            mid = 0.5 * (lo + hi)
            x_mid = stepper.fixed(t0, x0, mid)
            if eval_at(t0 + mid, x_mid).sat_active == active0:
                lo = mid
            else:
                hi = mid
        x_star = stepper.fixed(t0, x0, hi)
        ev_star = eval_at(t0 + hi, x_star)
    except (FunnelViolation, SingularKappa):
        return None
    if ev_star.sat_active == active0:
        return None
    return t0 + hi, x_star, ev_star


def _assemble_trace(rows, events, term, rel_tol) -> SimTrace:
    cols = list(zip(*rows))
    return SimTrace(
        t=np.array(cols[0]),
        y=np.stack(cols[1]),
        yref=np.stack(cols[2]),
        e_norms=np.stack(cols[3]),
        psi=np.stack(cols[4]),
        k=np.stack(cols[5]),
        v=np.stack(cols[6]),
        u=np.stack(cols[7]),
        kappa=np.array(cols[8]),
        sat_active=np.array(cols[9], dtype=bool),
        events=events,
        term_reason=term,
        rel_tol=rel_tol,
    )


@dataclass(eq=False)
class OdeResult:
    t: np.ndarray
    x: np.ndarray
    term_reason: str    # completed | blowup
    t_term: float


def integrate_ode(f, x0, cfg: SimConfig, t0: float = 0.0) -> OdeResult:
    """Plain adaptive integration of x' = f(t, x) with blow-up detection.

    Terminates with reason ``blowup`` when the state norm exceeds
    cfg.blowup_norm or the step size underflows with the error test still
    failing.  Records every accepted step.
    """
    cfg.validate()
    x = np.atleast_1d(np.asarray(x0, dtype=float))
    t = t0
    t_end = t0 + cfg.t_end
    stepper = _Stepper(f, cfg.rel_tol, cfg.abs_tol)
    ts = [t]
    xs = [x.copy()]
    term = "completed"
    h = min(cfg.h_init, cfg.h_max)
    t_stop = t_end - 1e-15 * max(1.0, abs(t_end))
    while t < t_stop:
        h = min(h, t_end - t)
        x_new, err = stepper.trial(t, x, h)
        if err > 1.0 or not np.all(np.isfinite(x_new)):
            if h / 2.0 < cfg.h_min:
                term = "blowup"
                break
            h /= 2.0
            continue
        t += h
        x = x_new
        ts.append(t)
        xs.append(x.copy())
        if float(np.linalg.norm(x)) > cfg.blowup_norm:
            term = "blowup"
            break
        h = _grow(h, err, cfg.h_max)
    return OdeResult(t=np.array(ts), x=np.stack(xs), term_reason=term, t_term=t)


def integrate_baseline(plant, baseline, ref, init, cfg: SimConfig) -> BaselineTrace:
    """Integrate a fixed-funnel baseline loop (single output).

    ``baseline(t, stack)`` maps the raw error derivative stack (r, 1) to a
    scalar input and may raise BarrierViolation; persistent faults at the
    minimum step terminate the run with a FunnelFault event rather than a
    crash.
    """
    from .errors import BarrierViolation

    cfg.validate()
    init = np.asarray(init, dtype=float)

    def f(tt, xx):
        stack = plant.outputs(xx) - ref.stack(tt, plant.r)
        u = baseline(tt, stack)
        return plant.rhs(xx, u)

    stepper = _Stepper(f, cfg.rel_tol, cfg.abs_tol)
    t = 0.0
    x = init.copy()
    events = []
    term = "completed"

    def snap(tt, xx):
        stack = plant.outputs(xx) - ref.stack(tt, plant.r)
        u = baseline(tt, stack)
        return (tt, plant.outputs(xx)[0].copy(), ref.eval(tt, 0),
                float(np.linalg.norm(stack[0])), float(u))

    rows = [snap(t, x)]
    next_rec = cfg.record_stride
    h = min(cfg.h_init, cfg.h_max)
    while t < cfg.t_end * (1.0 - 1e-15):
        h = min(h, cfg.t_end - t)
        try:
            x_new, err = stepper.trial(t, x, h)
            if err > 1.0 or not np.all(np.isfinite(x_new)):
                raise _RejectStep()
            row = snap(t + h, x_new)
        except (BarrierViolation, _RejectStep) as exc:
            if h / 2.0 < cfg.h_min:
                kind = "FunnelFault" if isinstance(exc, BarrierViolation) else "Blowup"
                events.append(Event(t, kind, {"detail": str(exc)}))
                term = "funnel_fault" if kind == "FunnelFault" else "blowup"
                break
            h /= 2.0
            continue
        t += h
        x = x_new
        if float(np.linalg.norm(x)) > cfg.blowup_norm:
            rows.append(row)
            events.append(Event(t, "Blowup", {"state_norm": float(np.linalg.norm(x))}))
            term = "blowup"
            break
        if t >= next_rec * (1.0 - 1e-12) or t >= cfg.t_end * (1.0 - 1e-15):
            rows.append(row)
            next_rec = (math.floor(t / cfg.record_stride) + 1) * cfg.record_stride
        h = _grow(h, err, cfg.h_max)

    cols = list(zip(*rows))
    return BaselineTrace(
        t=np.array(cols[0]),
        y=np.stack(cols[1]),
        yref=np.stack(cols[2]),
        e_norm=np.array(cols[3]),
        u=np.array(cols[4]),
        events=events,
        term_reason=term,
    )


class _RejectStep(Exception):
    pass


def saturation_intervals(trace: SimTrace):
    """Maximal intervals on which the saturation is active.

    Uses bisection-localized SatOn/SatOff events when present (precise
    endpoints); otherwise falls back to scanning rows at the recording
    stride.  A final open interval is closed at the last trace time.
    """
    t_last = float(trace.t[-1])
    toggles = [e for e in trace.events if e.kind in ("SatOn", "SatOff")]
    if toggles:
        out = []
        t_on = 0.0 if trace.sat_active[0] else None
        for e in toggles:
            if e.kind == "SatOn":
                if t_on is None:
                    t_on = e.t
            else:
                if t_on is not None:
                    out.append((t_on, e.t))
                    t_on = None
        if t_on is not None:
            out.append((t_on, t_last))
        return out
    out = []
    active = trace.sat_active
    t_on = None
    for i in range(len(active)):
        if active[i] and t_on is None:
            t_on = float(trace.t[i])
        elif not active[i] and t_on is not None:
            out.append((t_on, float(trace.t[i])))
            t_on = None
    if t_on is not None:
        out.append((t_on, t_last))
    return out
