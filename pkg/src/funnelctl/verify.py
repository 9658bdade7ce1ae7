"""Executable checks of the closed-loop guarantees.

Each check is a pure function of a trace and a parameter set and returns a
:class:`VerdictReport` with the worst signed margin (negative = violated)
and the time at which it occurred.  Also here: the finite-escape-time
oracle for the quadratic prototype, the high-gain grid function, the
constructive saturation level with its certificate, and the invariant-set
sweep.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import params as prm
from .controller import Saturation
from .errors import (GridResolutionError, HighGainSearchError, UnsupportedPlant)
from .plants import LinearBIF, blowup_closed_form
from .sim import SimConfig, SimTrace, integrate, integrate_ode, saturation_intervals

__all__ = [
    "VerdictReport",
    "check_funnel_membership",
    "check_recovery",
    "check_lower_and_ratio_bounds",
    "blowup_oracle",
    "HighGainQuery",
    "chi_grid",
    "saturation_level",
    "invariant_set_sweep",
]


@dataclass
class VerdictReport:
    check_name: str
    passed: bool
    worst_margin: float     # signed distance to violation, negative = fail
    t_worst: float
    details: str = ""

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        return (f"[{status}] {self.check_name}: worst_margin={self.worst_margin:.6g} "
                f"at t={self.t_worst:.6g}  {self.details}")


def _trace_tol(trace: SimTrace, scale: float) -> float:
    """Default absolute tolerance: 1e-6 plus ten integrator tolerances at scale."""
    return 1e-6 + 10.0 * trace.rel_tol * max(1.0, scale)


def check_funnel_membership(trace: SimTrace, params: prm.FunnelParams) -> VerdictReport:
    """Every committed row must satisfy ||e_i|| < psi_i for all levels.

    Margin is the relative gap (psi_i - ||e_i||)/psi_i, minimized over rows
    and levels; zero or negative fails (the funnels are open sets).
    """
    gaps = (trace.psi - trace.e_norms) / trace.psi
    idx = np.unravel_index(np.argmin(gaps), gaps.shape)
    worst = float(gaps[idx])
    return VerdictReport(
        check_name="funnel_membership",
        passed=worst > 0.0,
        worst_margin=worst,
        t_worst=float(trace.t[idx[0]]),
        details=f"level {idx[1] + 1}, {trace.t.size} rows",
    )


def check_recovery(trace: SimTrace, params: prm.FunnelParams,
                   tol_abs: float = None) -> VerdictReport:
    """On every saturation-inactive span the radii must stay under the
    exponential recovery envelope anchored at the span's first row."""
    active = saturation_intervals(trace)
    spans = _inactive_spans(trace, active)
    worst = math.inf
    t_worst = float(trace.t[0])
    n_spans = 0
    for (a, b) in spans:
        sel = (trace.t >= a - 1e-12) & (trace.t <= b + 1e-12)
        idxs = np.nonzero(sel)[0]
        if idxs.size < 2:
            continue
        n_spans += 1
        t0 = trace.t[idxs[0]]
        psi_t0 = trace.psi[idxs[0]]
        dts = trace.t[idxs] - t0
        bound = prm.recovery_bound(params, psi_t0, dts)     # (r, n)
        margins = bound - trace.psi[idxs].T
        j = np.unravel_index(np.argmin(margins), margins.shape)
        if margins[j] < worst:
            worst = float(margins[j])
            t_worst = float(trace.t[idxs[j[1]]])
    if not math.isfinite(worst):
        # no span with interior rows; nothing to violate
        worst = 0.0
    if tol_abs is None:
        tol_abs = _trace_tol(trace, float(np.max(trace.psi)))
    return VerdictReport(
        check_name="recovery",
        passed=worst >= -tol_abs,
        worst_margin=worst,
        t_worst=t_worst,
        details=f"{n_spans} saturation-inactive spans, tol={tol_abs:.3g}",
    )


def _inactive_spans(trace: SimTrace, active):
    t0, t1 = float(trace.t[0]), float(trace.t[-1])
    spans = []
    cur = t0
    for (a, b) in active:
        if a > cur:
            spans.append((cur, a))
        cur = max(cur, b)
    if cur < t1:
        spans.append((cur, t1))
    return spans


def check_lower_and_ratio_bounds(trace: SimTrace, params: prm.FunnelParams,
                                 tol_abs: float = None) -> VerdictReport:
    """Radii must respect the decay floor and the uniform ratio bounds.

    psi_i(t) >= L_i(t), psi_i/psi_{i+1} <= adjacent_i, psi_i/psi_r <= vs_last_i.
    """
    if tol_abs is None:
        tol_abs = _trace_tol(trace, float(np.max(trace.psi)))
    env = prm.lower_envelope(params, trace.t)            # (r, n)
    margins = trace.psi.T - env
    j = np.unravel_index(np.argmin(margins), margins.shape)
    worst = float(margins[j])
    t_worst = float(trace.t[j[1]])
    what = f"floor level {j[0] + 1}"
    rb = prm.ratio_bound_constants(params)
    r = params.r
    for i in range(r - 1):
        m = rb.vs_last[i] - trace.psi[:, i] / trace.psi[:, r - 1]
        jj = int(np.argmin(m))
        if m[jj] < worst:
            worst = float(m[jj])
            t_worst = float(trace.t[jj])
            what = f"psi_{i + 1}/psi_{r} bound"
    for i in range(r - 2):
        m = rb.adjacent[i] - trace.psi[:, i] / trace.psi[:, i + 1]
        jj = int(np.argmin(m))
        if m[jj] < worst:
            worst = float(m[jj])
            t_worst = float(trace.t[jj])
            what = f"psi_{i + 1}/psi_{i + 2} bound"
    return VerdictReport(
        check_name="lower_and_ratio_bounds",
        passed=worst >= -tol_abs,
        worst_margin=worst,
        t_worst=t_worst,
        details=f"worst at {what}, tol={tol_abs:.3g}",
    )


def blowup_oracle(M_values, rel_tol: float = 1e-8, abs_tol: float = 1e-8,
                  t_no_blowup: float = 10.0, rel_err_tol: float = 0.01) -> VerdictReport:
    """Compare detected escape times of y' = y^2 - M, y(0) = 1 to closed form.

    For M < 1 the detected blow-up time must match the closed-form pole
    within ``rel_err_tol`` relative; for M >= 1 no blow-up may occur up to
    ``t_no_blowup``.
    """
    worst = math.inf
    t_worst = 0.0
    lines = []
    for M in M_values:
        if M <= 0:
            raise ValueError("each M must be positive")
        cfg = SimConfig(t_end=t_no_blowup, rel_tol=rel_tol, abs_tol=abs_tol,
                        h_min=1e-14)

        def f(t, x, M=M):
            return np.array([x[0] * x[0] - M])

        res = integrate_ode(f, np.array([1.0]), cfg)
        _, omega = blowup_closed_form(M)
        if M < 1.0:
            if res.term_reason != "blowup":
                worst = -1.0
                t_worst = res.t_term
                lines.append(f"M={M}: expected blow-up, none by t={res.t_term:.3g}")
                continue
            rel_err = abs(res.t_term - omega) / omega
            lines.append(f"M={M}: omega={omega:.6f} detected={res.t_term:.6f} "
                         f"rel_err={rel_err:.2e}")
            margin = rel_err_tol - rel_err
            if margin < worst:
                worst = margin
                t_worst = res.t_term
        else:
            if res.term_reason == "blowup":
                worst = -1.0
                t_worst = res.t_term
                lines.append(f"M={M}: unexpected blow-up at t={res.t_term:.6f}")
            else:
                lines.append(f"M={M}: no blow-up by t={t_no_blowup}")
    if not math.isfinite(worst):
        worst = rel_err_tol
    return VerdictReport(
        check_name="blowup_oracle",
        passed=worst >= 0.0,
        worst_margin=worst,
        t_worst=t_worst,
        details="; ".join(lines),
    )


@dataclass(eq=False)
class HighGainQuery:
    """Domain of the high-gain grid minimization for a single-output linear plant.

    The disturbance set is a point (radius 0 here) and the internal-response
    set a ball of radius ``R_q``; ``nu_star`` fixes the inner radius of the
    gain annulus.  Grid resolutions must be at least 16.
    """

    plant: LinearBIF
    R_q: float = 0.0
    nu_star: float = 0.5
    w_res: int = 257
    z_res: int = 257

    def __post_init__(self):
        if self.plant.m != 1:
            raise UnsupportedPlant("high-gain grid supports single-output plants only")
        if self.w_res < 16 or self.z_res < 16:
            raise ValueError("grid resolutions must be >= 16")
        if self.R_q < 0:
            raise ValueError("R_q must be nonnegative")
        if not 0.0 < self.nu_star < 1.0:
            raise ValueError("nu_star must lie in (0, 1)")


def chi_grid(q: HighGainQuery, s: float) -> float:
    """Grid minimum of w (z - s Gamma w) over |w| in [nu_star, 1], |z| <= R_q.

    The returned value is an upper bound on the exact high-gain function
    at s that tightens under grid refinement (nested grids never increase
    the minimum, since refinement only adds candidate points).
    """
    gamma = float(q.plant.Gamma[0, 0])
    a = np.linspace(q.nu_star, 1.0, q.w_res)
    w = np.concatenate([-a, a])
    if q.R_q == 0.0:
        z = np.zeros(1)
    else:
        z = np.linspace(-q.R_q, q.R_q, q.z_res)
    vals = np.outer(w, z) - s * gamma * (w * w)[:, np.newaxis]
    return float(vals.min())


def saturation_level(plant: LinearBIF, params: prm.FunnelParams, eps: float,
                     K: float, delta: float = 1.0, w_res: int = 257,
                     z_res: int = 257, max_steps: int = 60):
    """Construct a saturation level M under which the loop never saturates.

    Runs the constant recursion from the design parameters, over-bounds the
    internal-response radius R_q, then searches the containment fraction of
    the top level on the geometric grid eps_r in {1 - 2^-j} until the
    high-gain value clears twice the demand chi*.  Returns (M, certificate)
    with every intermediate recorded.  Raises HighGainSearchError when the
    grid is exhausted and GridResolutionError when doubling the w/z grids
    moves M by more than 1%.
    """
    prm.require_valid(params)
    if plant.m != 1 or params.m != 1:
        raise UnsupportedPlant("saturation level construction supports m = 1 only")
    if plant.r != params.r:
        raise UnsupportedPlant("plant and controller order disagree")
    gamma = float(plant.Gamma[0, 0])
    if gamma == 0.0:
        raise UnsupportedPlant("Gamma must be sign-definite (nonzero)")
    if not 0.0 < eps < 1.0:
        raise ValueError("eps must lie in (0, 1)")
    if K <= 0:
        raise ValueError("K must be positive")

    r = params.r
    consts = prm.saturation_level_constants(params, eps)
    psi_max = consts.psi_max
    eps_vec = consts.eps_vec
    c = consts.c

    # admissible initial data: ||e_i(0)|| <= eps psi_i^0, so the output
    # derivative block at t = 0 is bounded through the cascade
    psi0 = params._psi0_arr
    e_deriv_bound = np.empty(r)
    for i in range(r):
        prev = psi0[i - 1] if i >= 1 else 0.0
        e_deriv_bound[i] = eps * psi0[i] + (eps / (1.0 - eps * eps)) * eps * prev
    K_hat = K + float(np.max(e_deriv_bound)) + K

    bands = np.empty(r)
    bands[0] = psi_max[0] + K_hat
    for i in range(1, r):
        bands[i] = psi_max[i] + psi_max[i - 1] / (1.0 - eps_vec[i - 1] ** 2) + K_hat

    R_q, cq_info = _internal_response_radius(plant, bands)

    chi_star = (K + c[r - 1] * psi_max[r - 1] + params.alpha[r - 1] * psi_max[r - 1]) \
        * psi_max[r - 1]

    def search(wr, zr):
        query = HighGainQuery(plant=plant, R_q=R_q, w_res=wr, z_res=zr)
        best_chi = -math.inf
        eps_r = eps
        for j in range(max_steps + 1):
            cand = eps if j == 0 else 1.0 - 2.0 ** (-j)
            if cand < eps:
                continue
            eps_r = cand
            k_top = 1.0 / (1.0 - eps_r * eps_r)
            chi_val = chi_grid(query, params.surjection(k_top))
            best_chi = max(best_chi, chi_val)
            if chi_val >= 2.0 * chi_star:
                sup_n = params.surjection.sup_abs(k_top)
                return sup_n * params.psi0[r - 1] + delta, eps_r, k_top, chi_val
        raise HighGainSearchError(best_chi, 2.0 * chi_star, eps_r)

    M, eps_r, k_top, chi_val = search(w_res, z_res)
    M_refined, _, _, _ = search(2 * w_res - 1, 2 * z_res - 1)

    certificate = {
        "psi_ratio_bounds": np.array(
            [prm._adjacent_ratio_bound(params, i) for i in range(r - 1)]),
        "c": c,
        "eps_vec": eps_vec,
        "eps_r": eps_r,
        "k_top": k_top,
        "psi_max": psi_max,
        "K": K,
        "K_hat": K_hat,
        "bands": bands,
        "R_q": R_q,
        "C_Q": cq_info,
        "chi_star": chi_star,
        "chi_achieved": chi_val,
        "sup_N": params.surjection.sup_abs(k_top),
        "delta": delta,
        "M": M,
        "M_refined": M_refined,
    }
    if abs(M_refined - M) > 0.01 * M:
        raise GridResolutionError(M, M_refined, certificate)
    return M, certificate


def _internal_response_radius(plant: LinearBIF, bands):
    """Over-bound for the internal response: sum_i ||R_i|| B_i plus the
    eta contribution through S, using a sampled sup of ||exp(Q t)|| and the
    spectral abscissa for the convolution tail."""
    R_q = sum(float(np.linalg.norm(plant.R[i], 2)) * bands[i]
              for i in range(plant.r))
    info = {"sampled_sup": 0.0, "abscissa": None, "t_star": 0.0}
    if plant.q > 0:
        eigs = np.linalg.eigvals(plant.Q)
        absc = float(np.max(eigs.real))
        info["abscissa"] = absc
        if absc >= 0.0:
            raise UnsupportedPlant(
                "internal dynamics must be exponentially stable for a finite "
                f"response radius (spectral abscissa {absc:.3g})")
        t_star = 20.0 / abs(absc)
        info["t_star"] = t_star
        ts = np.linspace(0.0, t_star, 400)
        c_q = _expm_sup(plant.Q, ts)
        info["sampled_sup"] = c_q
        s_norm = float(np.linalg.norm(plant.S, 2))
        p_norm = float(np.linalg.norm(plant.P, 2))
        eta0_norm = float(np.linalg.norm(plant.eta0))
        R_q += s_norm * (c_q * eta0_norm + c_q * p_norm * bands[0] / abs(absc))
    return R_q, info


def _expm_sup(Q, ts):
    """sup of the spectral norm of exp(Q t) over sample times, via eigendecomposition
    with a dense-product fallback."""
    sup = 0.0
    try:
        w, V = np.linalg.eig(Q)
        Vi = np.linalg.inv(V)
        for t in ts:
            E = (V * np.exp(w * t)) @ Vi
            sup = max(sup, float(np.linalg.norm(E.real, 2)))
    except np.linalg.LinAlgError:
        step = ts[1] - ts[0]
        E1 = np.eye(Q.shape[0]) + sum(
            np.linalg.matrix_power(Q * step, k) / math.factorial(k) for k in range(1, 12))
        E = np.eye(Q.shape[0])
        for _ in ts:
            sup = max(sup, float(np.linalg.norm(E, 2)))
            E = E1 @ E
    return sup


def invariant_set_sweep(plant, params: prm.FunnelParams, sat_level: float,
                        eps_vec, ref, n_samples: int = 50,
                        cfg: SimConfig = None, seed: int = 0,
                        tol: float = None) -> VerdictReport:
    """Sample initial errors inside the fractions eps_i and confirm invariance.

    Each sample satisfies ||e_i(0)|| <= eps_i psi_i^0; the closed loop runs
    under a box saturation at ``sat_level`` and every recorded row must
    keep ||e_i(t)|| <= eps_i psi_i(t) and ||v(t)|| <= sat_level.
    """
    eps_vec = np.asarray(eps_vec, dtype=float)
    if eps_vec.shape != (params.r,) or np.any(eps_vec <= 0) or np.any(eps_vec >= 1):
        raise ValueError("eps_vec must have length r with entries in (0, 1)")
    if cfg is None:
        cfg = SimConfig(t_end=8.0, rel_tol=1e-8, abs_tol=1e-8)
    if tol is None:
        tol = 1e-6 + 10.0 * cfg.rel_tol * max(1.0, sat_level)
    rng = np.random.default_rng(seed)
    sat = Saturation(kind="box", level=sat_level)
    r, m = params.r, params.m
    worst = math.inf
    t_worst = 0.0
    failures = []
    for idx in range(n_samples):
        stack = _sample_admissible_stack(params, eps_vec, rng)
        yblock = stack + ref.stack(0.0, r)
        if isinstance(plant, LinearBIF):
            init = plant.assemble_state(yblock.reshape(r * m))
        elif plant.state_dim == r * m:
            init = yblock.reshape(r * m)
        else:
            raise UnsupportedPlant(
                "invariant sweep needs a plant whose state is the output "
                "derivative block (plus internal state for the linear form)")
        trace = integrate(plant, params, sat, ref, init, cfg)
        if trace.term_reason != "completed":
            failures.append(f"sample {idx}: terminated with {trace.term_reason}")
            worst = min(worst, -1.0)
            continue
        gap_e = eps_vec[np.newaxis, :] * trace.psi - trace.e_norms
        v_norms = np.linalg.norm(trace.v, axis=1)
        gap_v = sat_level - v_norms
        j = np.unravel_index(np.argmin(gap_e), gap_e.shape)
        if gap_e[j] < worst:
            worst = float(gap_e[j])
            t_worst = float(trace.t[j[0]])
        jj = int(np.argmin(gap_v))
        if gap_v[jj] < worst:
            worst = float(gap_v[jj])
            t_worst = float(trace.t[jj])
    passed = worst >= -tol and not failures
    details = f"{n_samples} samples, tol={tol:.3g}"
    if failures:
        details += "; " + "; ".join(failures[:3])
    return VerdictReport(
        check_name="invariant_set_sweep",
        passed=passed,
        worst_margin=worst if math.isfinite(worst) else 0.0,
        t_worst=t_worst,
        details=details,
    )


def _sample_admissible_stack(params: prm.FunnelParams, eps_vec, rng):
    """Draw cascade errors with ||e_i|| <= eps_i psi_i^0 and invert to a
    raw derivative stack."""
    r, m = params.r, params.m
    e = np.empty((r, m))
    k = np.empty(r)
    for i in range(r):
        radius = eps_vec[i] * params.psi0[i]
        if m == 1:
            e[i, 0] = rng.uniform(-radius, radius)
        else:
            direction = rng.normal(size=m)
            direction /= np.linalg.norm(direction)
            e[i] = direction * radius * rng.uniform(0.0, 1.0) ** (1.0 / m)
        ratio2 = float(e[i] @ e[i]) / params.psi0[i] ** 2
        k[i] = 1.0 / (1.0 - ratio2)
    stack = np.empty_like(e)
    stack[0] = e[0]
    for i in range(1, r):
        stack[i] = e[i] - k[i - 1] * e[i - 1]
    return stack
