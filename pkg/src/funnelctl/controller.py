"""Evaluation of the input-constrained funnel feedback law.

Pure, stateless functions: the error cascade with its reciprocal barrier
gains, the gain-scaled control signal, saturation with its deficit kappa,
the funnel-radius derivatives (including the kappa-driven widening of the
top level), and the two fixed-funnel baseline controllers used for
comparison runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import BarrierViolation, FunnelViolation, SingularKappa
from .params import FunnelParams

__all__ = [
    "Saturation",
    "ControllerEval",
    "error_cascade",
    "cascade_to_derivatives",
    "control_signal",
    "saturate",
    "funnel_rhs",
    "evaluate",
    "baseline_phi",
    "baseline_r2",
    "baseline_r3",
]


@dataclass(frozen=True)
class Saturation:
    """Input saturation map with its interior radius theta.

    ``box`` clips each component at +/- level, ``norm_ball`` rescales onto
    the Euclidean ball of radius level, ``identity`` passes through.  For
    the two bounded kinds sat(v) = v whenever ||v|| <= theta = level.
    """

    kind: str = "identity"
    level: float = math.inf

    def __post_init__(self):
        if self.kind not in ("box", "norm_ball", "identity"):
            raise ValueError(f"unknown saturation kind {self.kind!r}")
        if self.kind != "identity" and not self.level > 0:
            raise ValueError("saturation level must be positive")

    @property
    def theta(self) -> float:
        return math.inf if self.kind == "identity" else self.level

    def apply(self, v: np.ndarray):
        """Return (u, kappa) with u = sat(v) and kappa = ||v - u||."""
        v = np.asarray(v, dtype=float)
        if self.kind == "identity":
            return v, 0.0
        if self.kind == "box":
            u = np.minimum(np.maximum(v, -self.level), self.level)
        else:
            n = math.sqrt(float(v @ v))
            u = v * (self.level / n) if n > self.level else v
        d = v - u
        return u, math.sqrt(float(d @ d))


def saturate(s: Saturation, v):
    return s.apply(v)


@dataclass(frozen=True, eq=False)
class ControllerEval:
    """One evaluation of the feedback law at a given error stack and funnel state."""

    e_cascade: np.ndarray   # (r, m) cascade errors e_1..e_r
    k: np.ndarray           # (r,) barrier gains, all >= 1
    v: np.ndarray           # (m,) demanded input
    u: np.ndarray           # (m,) saturated input
    kappa: float            # saturation deficit ||v - u||
    psi_dot: np.ndarray     # (r,) funnel radius derivatives
    sat_active: bool        # kappa > 0


def error_cascade(stack: np.ndarray, psi: np.ndarray):
    """Form the cascade e_{i+1} = e^{(i)} + k_i e_i with k_i = (1 - ||e_i||^2/psi_i^2)^{-1}.

    ``stack`` rows are e, e', ..., e^{(r-1)}.  Levels are formed strictly in
    order so a violation reports the lowest offending level.

    Raises FunnelViolation(i, ...) as soon as ||e_i|| >= psi_i.
    """
    stack = np.atleast_2d(np.asarray(stack, dtype=float))
    psi = np.asarray(psi, dtype=float)
    r = stack.shape[0]
    e = np.empty_like(stack)
    k = np.empty(r)
    e[0] = stack[0]
    for i in range(r):
        nrm = math.sqrt(float(e[i] @ e[i]))
        if nrm >= psi[i]:
            raise FunnelViolation(i + 1, nrm, float(psi[i]))
        ratio2 = (nrm / psi[i]) ** 2
        k[i] = 1.0 / (1.0 - ratio2)
        if i < r - 1:
            e[i + 1] = stack[i + 1] + k[i] * e[i]
    return e, k


def cascade_to_derivatives(e_cascade: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Invert the cascade: recover the raw error derivative stack."""
    e_cascade = np.atleast_2d(np.asarray(e_cascade, dtype=float))
    k = np.asarray(k, dtype=float)
    stack = np.empty_like(e_cascade)
    stack[0] = e_cascade[0]
    for i in range(1, e_cascade.shape[0]):
        stack[i] = e_cascade[i] - k[i - 1] * e_cascade[i - 1]
    return stack


def control_signal(e_cascade: np.ndarray, k: np.ndarray, params: FunnelParams) -> np.ndarray:
    """Demanded input v = N(k_r) e_r."""
    return params.surjection(float(k[-1])) * e_cascade[-1]


def funnel_rhs(psi: np.ndarray, params: FunnelParams, e_r_norm: float,
               kappa: float, eta_guard: float = 0.0) -> np.ndarray:
    """Time derivatives of the funnel radii.

    psi_dot_i = p_i psi_{i+1} - alpha_i psi_i + kappa_c_i   (i < r)
    psi_dot_r = -alpha_r psi_r + beta_r + psi_r kappa / ||e_r||

    The widening term is exactly zero when kappa = 0 (no division).  A
    positive kappa with ||e_r|| <= eta_guard raises SingularKappa instead
    of being clamped: it would mask integrator overshoot.
    """
    psi = np.asarray(psi, dtype=float)
    r = params.r
    out = np.empty(r)
    a = params._alpha_arr
    if r > 1:
        out[:-1] = params._p_arr * psi[1:] - a[:-1] * psi[:-1] + params._kappa_c_arr
    last = -a[-1] * psi[-1] + params.beta[-1]
    if kappa > 0.0:
        if e_r_norm <= eta_guard:
            raise SingularKappa(kappa, e_r_norm, eta_guard)
        last += psi[-1] * kappa / e_r_norm
    out[-1] = last
    return out


def evaluate(params: FunnelParams, sat: Saturation, stack: np.ndarray,
             psi: np.ndarray, eta_guard: float = 0.0) -> ControllerEval:
    """Full controller evaluation: cascade, signal, saturation, funnel derivatives."""
    e, k = error_cascade(stack, psi)
    v = control_signal(e, k, params)
    u, kappa = sat.apply(v)
    e_r_norm = math.sqrt(float(e[-1] @ e[-1]))
    psi_dot = funnel_rhs(psi, params, e_r_norm, kappa, eta_guard)
    return ControllerEval(e_cascade=e, k=k, v=v, u=u, kappa=kappa,
                          psi_dot=psi_dot, sat_active=kappa > 0.0)


# --- baseline controllers (single-output) ---------------------------------

def baseline_phi(t: float, a: float, b: float, c: float) -> float:
    """Reciprocal funnel gain phi(t) = (a e^{-b t} + c)^{-1}; 1/phi is the funnel boundary."""
    return 1.0 / (a * math.exp(-b * t) + c)


def _bar(s: float, where: str) -> float:
    """Barrier map s -> 1/(1-s), defined on [0, 1)."""
    if s >= 1.0:
        raise BarrierViolation(s, where)
    return 1.0 / (1.0 - s)


def baseline_r2(e: float, edot: float, phi: float, N) -> float:
    """Fixed-funnel controller for order 2 (scalar signals).

    w = phi edot + (1 - phi^2 e^2)^{-1} phi e,  u = N((1 - w^2)^{-1}) w.
    Faults with BarrierViolation when either barrier argument reaches 1.
    """
    w = phi * edot + _bar(phi * phi * e * e, "inner barrier") * phi * e
    return N(_bar(w * w, "outer barrier")) * w


def baseline_r3(e: float, edot: float, eddot: float, phi: float, N) -> float:
    """Fixed-funnel controller for order 3 (scalar signals), one nesting deeper.

    gamma(s) = (1 - s^2)^{-1} s on (-1, 1);
    w = phi eddot + gamma(phi edot + gamma(phi e)),  u = N((1 - w^2)^{-1}) w.
    """
    def gamma(s: float, where: str) -> float:
        return _bar(s * s, where) * s

    inner = gamma(phi * e, "inner barrier")
    mid = gamma(phi * edot + inner, "middle barrier")
    w = phi * eddot + mid
    return N(_bar(w * w, "outer barrier")) * w
