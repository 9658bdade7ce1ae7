"""Controller design parameters and everything derivable from them alone.

The feedback law is parametrised by decay rates ``alpha``, offsets ``beta``,
coupling gains ``p``, initial funnel values ``psi0`` and a continuous
surjection ``N``.  This module validates those choices and computes the
closed-form constants attached to them: the funnel floors beta_i/alpha_i,
the exponential recovery coefficients nu_ij, ratio bounds, containment
fractions eps_i and the constant recursion used to construct an explicit
saturation level.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InitialConditionViolation

__all__ = [
    "Surjection",
    "make_surjection",
    "FunnelParams",
    "DerivedConstants",
    "RatioBoundConstants",
    "SaturationLevelConstants",
    "validate_params",
    "require_valid",
    "recovery_coeffs",
    "recovery_bound",
    "lower_envelope",
    "nominal_funnel",
    "ratio_bound_constants",
    "containment_fractions",
    "saturation_level_constants",
]


_SURJECTION_KINDS = ("s_sin", "neg_s2_cos", "linear_signed")


@dataclass(frozen=True)
class Surjection:
    """Continuous surjection N : [0, inf) -> R scaling the top-level gain.

    Kinds:
      ``s_sin``          N(s) = s sin(s)
      ``neg_s2_cos``     N(s) = -s^2 cos(s)
      ``linear_signed``  N(s) = sigma * s for a known control direction
                         sigma in {+1, -1}; not surjective onto all of R,
                         usable when the sign of the gain is known.
    """

    kind: str = "neg_s2_cos"
    sigma: int = -1

    def __post_init__(self):
        if self.kind not in _SURJECTION_KINDS:
            raise ValueError(f"unknown surjection kind {self.kind!r}")
        if self.kind == "linear_signed" and self.sigma not in (-1, 1):
            raise ValueError("linear_signed needs sigma in {-1, +1}")

    def __call__(self, s: float) -> float:
        if self.kind == "s_sin":
            return s * math.sin(s)
        if self.kind == "neg_s2_cos":
            return -s * s * math.cos(s)
        return self.sigma * s

    def sup_abs(self, k: float) -> float:
        """Upper bound for sup of |N| over [0, k].

        Uses the envelope |N(s)| <= s (s_sin), <= s^2 (neg_s2_cos) or the
        exact value (linear_signed).  An over-estimate is sound everywhere
        this is consumed: it shrinks the singularity guard radius and
        enlarges computed saturation levels.
        """
        if k < 0:
            raise ValueError("negative interval end")
        if self.kind == "neg_s2_cos":
            return k * k
        return k


def make_surjection(kind: str, sigma: int = -1) -> Surjection:
    return Surjection(kind=kind, sigma=sigma)


@dataclass(frozen=True, eq=False)
class FunnelParams:
    """Design parameters of the feedback law for a system of order r.

    ``alpha``/``beta``/``psi0`` have length r, ``p`` has length r-1 (empty
    for r = 1).  Validity (strictly decreasing alpha, p_i > 1, positive
    beta, psi0 above the funnel floor) is checked by :func:`validate_params`;
    construction only enforces shape consistency.
    """

    alpha: tuple
    beta: tuple
    p: tuple
    psi0: tuple
    surjection: Surjection = Surjection()
    m: int = 1

    def __post_init__(self):
        alpha = tuple(float(a) for a in self.alpha)
        beta = tuple(float(b) for b in self.beta)
        p = tuple(float(x) for x in self.p)
        psi0 = tuple(float(x) for x in self.psi0)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "psi0", psi0)
        r = len(alpha)
        if r < 1:
            raise ValueError("system order r must be >= 1")
        if len(beta) != r or len(psi0) != r:
            raise ValueError("alpha, beta, psi0 must all have length r")
        if len(p) != r - 1:
            raise ValueError("p must have length r - 1")
        if self.m < 1:
            raise ValueError("m must be >= 1")
        # cached arrays for the integration hot path
        object.__setattr__(self, "_alpha_arr", np.asarray(alpha))
        object.__setattr__(self, "_beta_arr", np.asarray(beta))
        object.__setattr__(self, "_p_arr", np.asarray(p))
        object.__setattr__(self, "_psi0_arr", np.asarray(psi0))
        if r > 1:
            kc = self._beta_arr[:-1] - self._p_arr * self._beta_arr[1:] / self._alpha_arr[1:]
        else:
            kc = np.zeros(0)
        object.__setattr__(self, "_kappa_c_arr", kc)

    @property
    def r(self) -> int:
        return len(self.alpha)

    @property
    def psi_floor(self) -> np.ndarray:
        """The asymptotic funnel radii beta_i / alpha_i."""
        return self._beta_arr / self._alpha_arr

    @property
    def kappa_c(self) -> np.ndarray:
        """Constant offsets kappa_i = beta_i - p_i beta_{i+1}/alpha_{i+1}."""
        return self._kappa_c_arr


def validate_params(p: FunnelParams) -> list:
    """Check the strict parameter inequalities; return a violation list.

    An empty list means the parameter set is admissible.  Comparisons are
    exact (no epsilon): these are design inputs, not measurements.
    """
    out = []
    r = p.r
    for i in range(r - 1):
        if not p.alpha[i] > p.alpha[i + 1]:
            out.append(f"alpha_{i + 1} > alpha_{i + 2} fails "
                       f"({p.alpha[i]} vs {p.alpha[i + 1]})")
    if not p.alpha[r - 1] > 0.0:
        out.append(f"alpha_{r} > 0 fails ({p.alpha[r - 1]})")
    for i in range(r - 1):
        if not p.p[i] > 1.0:
            out.append(f"p_{i + 1} > 1 fails ({p.p[i]})")
    for i in range(r):
        if not p.beta[i] > 0.0:
            out.append(f"beta_{i + 1} > 0 fails ({p.beta[i]})")
        elif p.alpha[i] > 0.0 and not p.psi0[i] > p.beta[i] / p.alpha[i]:
            out.append(f"psi_{i + 1}^0 > beta_{i + 1}/alpha_{i + 1} fails "
                       f"({p.psi0[i]} vs {p.beta[i] / p.alpha[i]})")
    return out


def require_valid(p: FunnelParams) -> None:
    violations = validate_params(p)
    if violations:
        raise ValueError("invalid funnel parameters: " + "; ".join(violations))


@dataclass(frozen=True, eq=False)
class DerivedConstants:
    """Closed-form constants attached to a parameter set.

    ``nu`` is an (r, r) array whose upper triangle holds
    nu_ij = prod_{k=i}^{j-1} p_k / (alpha_k - alpha_j) with nu_ii = 1;
    entries below the diagonal are zero.  ``mu0`` holds the initial funnel
    deviations psi_i(t0) - beta_i/alpha_i.
    """

    kappa_c: np.ndarray
    nu: np.ndarray
    mu0: np.ndarray
    psi_floor: np.ndarray


def recovery_coeffs(p: FunnelParams, psi_at_t0=None) -> DerivedConstants:
    """Coefficients of the exponential recovery bound.

    ``psi_at_t0`` defaults to psi0.  Requires strictly decreasing alpha
    (enforced via :func:`require_valid`), otherwise nu has a pole.
    """
    require_valid(p)
    r = p.r
    if psi_at_t0 is None:
        psi_at_t0 = p._psi0_arr
    psi_at_t0 = np.asarray(psi_at_t0, dtype=float)
    if psi_at_t0.shape != (r,):
        raise ValueError("psi_at_t0 must have length r")
    nu = np.zeros((r, r))
    for i in range(r):
        nu[i, i] = 1.0
        for j in range(i + 1, r):
            prod = 1.0
            for k in range(i, j):
                prod *= p.p[k] / (p.alpha[k] - p.alpha[j])
            nu[i, j] = prod
    floor = p.psi_floor
    return DerivedConstants(
        kappa_c=p.kappa_c.copy(),
        nu=nu,
        mu0=psi_at_t0 - floor,
        psi_floor=floor,
    )


def recovery_bound(p: FunnelParams, psi_at_t0, dt):
    """Upper envelope of the funnel radii dt seconds into an unsaturated span.

    B_i(dt) = beta_i/alpha_i + sum_{j>=i} mu_j(t0) nu_ij exp(-alpha_j dt).
    ``dt`` may be a scalar (returns shape (r,)) or a 1-d array (returns
    shape (r, len(dt))).
    """
    dc = recovery_coeffs(p, psi_at_t0)
    dt_arr = np.atleast_1d(np.asarray(dt, dtype=float))
    if np.any(dt_arr < 0):
        raise ValueError("dt must be nonnegative")
    weights = dc.nu * dc.mu0[np.newaxis, :]          # (r, r): mu_j nu_ij
    decays = np.exp(-p._alpha_arr[:, np.newaxis] * dt_arr[np.newaxis, :])
    out = dc.psi_floor[:, np.newaxis] + weights @ decays
    return out[:, 0] if np.isscalar(dt) or np.ndim(dt) == 0 else out


def lower_envelope(p: FunnelParams, t):
    """Guaranteed funnel floor trajectory L_i(t) = mu_i(0) e^{-alpha_i t} + beta_i/alpha_i.

    Every closed-loop funnel radius stays at or above this envelope,
    saturated or not.  ``t`` may be scalar or a 1-d array.
    """
    require_valid(p)
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(t_arr < 0):
        raise ValueError("t must be nonnegative")
    floor = p.psi_floor
    mu0 = p._psi0_arr - floor
    out = floor[:, np.newaxis] + mu0[:, np.newaxis] * np.exp(
        -p._alpha_arr[:, np.newaxis] * t_arr[np.newaxis, :])
    return out[:, 0] if np.isscalar(t) or np.ndim(t) == 0 else out


def nominal_funnel(p: FunnelParams, psi_at_t0, dt):
    """Exact funnel radii under zero saturation deficit.

    With kappa identically zero the funnel system is affine with a
    bidiagonal matrix; its solution is a modal expansion
    psi_i(dt) = beta_i/alpha_i + sum_{j>=i} D_ij exp(-alpha_j dt)
    whose coefficients follow from back substitution.  ``dt`` as in
    :func:`recovery_bound`.
    """
    require_valid(p)
    r = p.r
    psi_at_t0 = np.asarray(psi_at_t0, dtype=float)
    floor = p.psi_floor
    delta = psi_at_t0 - floor
    coeff = np.zeros((r, r))
    coeff[r - 1, r - 1] = delta[r - 1]
    for i in range(r - 2, -1, -1):
        for j in range(i + 1, r):
            coeff[i, j] = p.p[i] * coeff[i + 1, j] / (p.alpha[i] - p.alpha[j])
        coeff[i, i] = delta[i] - coeff[i, i + 1:].sum()
    dt_arr = np.atleast_1d(np.asarray(dt, dtype=float))
    decays = np.exp(-p._alpha_arr[:, np.newaxis] * dt_arr[np.newaxis, :])
    out = floor[:, np.newaxis] + coeff @ decays
    return out[:, 0] if np.isscalar(dt) or np.ndim(dt) == 0 else out


@dataclass(frozen=True, eq=False)
class RatioBoundConstants:
    """Uniform bounds on funnel radius ratios along any closed-loop run.

    ``vs_last[i]`` bounds psi_{i+1}/psi_r (indices 0..r-2); ``adjacent[i]``
    bounds psi_{i+1}/psi_{i+2} (indices 0..r-3).
    """

    vs_last: np.ndarray
    adjacent: np.ndarray


def _adjacent_ratio_bound(p: FunnelParams, i: int) -> float:
    """Bound for psi_{i+1}/psi_{i+2}, 0-based i in [0, r-2]."""
    a, b, ps0 = p.alpha, p.beta, p.psi0
    return max(
        ps0[i] / ps0[i + 1],
        (p.p[i] * b[i + 1] + b[i] * a[i + 1]) / (b[i + 1] * (a[i] - a[i + 1])),
    )


def ratio_bound_constants(p: FunnelParams) -> RatioBoundConstants:
    """Constants bounding psi_i/psi_r and psi_i/psi_{i+1} for all time.

    For r = 1 both vectors are empty.  Near-equal adjacent alphas make the
    constants diverge; the diverging value is returned as computed, never
    clamped.
    """
    require_valid(p)
    r = p.r
    if r == 1:
        return RatioBoundConstants(vs_last=np.zeros(0), adjacent=np.zeros(0))
    a, b, ps0 = p.alpha, p.beta, p.psi0
    vs_last = np.zeros(r - 1)
    vs_last[r - 2] = _adjacent_ratio_bound(p, r - 2)
    for i in range(r - 3, -1, -1):
        vs_last[i] = max(
            ps0[i] / ps0[r - 1],
            (p.p[i] * vs_last[i + 1] + b[i] * a[r - 1] / b[r - 1]) / (a[i] - a[r - 1]),
        )
    adjacent = np.array([_adjacent_ratio_bound(p, i) for i in range(r - 2)])
    return RatioBoundConstants(vs_last=vs_last, adjacent=adjacent)


def containment_fractions(p: FunnelParams, e0_norms, c) -> np.ndarray:
    """Fractions eps_i < 1 such that ||e_i(t)|| <= eps_i psi_i(t) is provable.

    eps_i = max( ||e_i(0)||/psi_i^0,
                 1/p_i,
                 sqrt(1 - 1/(p_i^2 alpha_i beta_{i+1}/(beta_i alpha_{i+1})
                              + p_i (alpha_i + c_i))) )
    for i = 1..r-1.  ``c`` holds the cascade-derivative bounds c_i (pass
    zeros when they are unknown; c_1 is zero by construction).  The square
    root argument is floored at zero: a nonpositive argument means that
    constraint is vacuous.
    """
    require_valid(p)
    r = p.r
    e0_norms = np.asarray(e0_norms, dtype=float)
    c = np.asarray(c, dtype=float)
    if e0_norms.shape != (r - 1,) or c.shape != (r - 1,):
        raise ValueError("e0_norms and c must have length r - 1")
    if np.any(c < 0):
        raise ValueError("c entries must be nonnegative")
    out = np.zeros(r - 1)
    for i in range(r - 1):
        if e0_norms[i] >= p.psi0[i]:
            raise InitialConditionViolation(
                f"||e_{i + 1}(0)|| = {e0_norms[i]:.6g} >= psi_{i + 1}^0 = {p.psi0[i]:.6g}"
            )
        x = (p.p[i] ** 2 * p.alpha[i] * p.beta[i + 1] / (p.beta[i] * p.alpha[i + 1])
             + p.p[i] * (p.alpha[i] + c[i]))
        out[i] = max(
            e0_norms[i] / p.psi0[i],
            1.0 / p.p[i],
            math.sqrt(max(0.0, 1.0 - 1.0 / x)),
        )
    return out


@dataclass(frozen=True, eq=False)
class SaturationLevelConstants:
    """Intermediates of the constructive saturation-level recursion.

    ``c`` has length r (c_1 = 0), ``eps_vec`` length r-1 and ``psi_max``
    length r.  ``psi_max`` is the recovery bound evaluated at dt = 0 from
    psi0, i.e. with deviations mu_j(0) indexed by the summation variable.
    """

    c: np.ndarray
    eps_vec: np.ndarray
    psi_max: np.ndarray


def saturation_level_constants(p: FunnelParams, eps: float) -> SaturationLevelConstants:
    """Run the interleaved c_i / eps_i recursion seeded by ``eps``.

    The recursion uses the adjacent ratio bounds M_i; c_i bounds the scaled
    cascade derivative at level i and eps_i the provable containment
    fraction, each feeding the next c.
    """
    require_valid(p)
    if not 0.0 < eps < 1.0:
        raise ValueError("eps must lie in (0, 1)")
    r = p.r
    c = np.zeros(r)
    eps_vec = np.zeros(r - 1)
    ratio = np.array([_adjacent_ratio_bound(p, i) for i in range(r - 1)])
    kc = p.kappa_c
    for i in range(1, r + 1):          # 1-based level index
        if i >= 2:
            j = i - 2                  # 0-based index of level i-1 quantities
            q = 1.0 / (1.0 - eps_vec[j] ** 2)
            c[i - 1] = (2.0 * q * (2.0 * p.p[j] + p.alpha[j] * ratio[j]
                                   + p.alpha[j] * kc[j] / p.beta[j]
                                   + ratio[j] * c[j] + ratio[j] * q)
                        + q * (1.0 + ratio[j] * q + ratio[j] * c[j]))
        if i <= r - 1:
            ev = containment_fractions(
                p,
                e0_norms=np.full(r - 1, eps) * p._psi0_arr[:-1],
                c=c[:r - 1],
            )
            eps_vec[i - 1] = ev[i - 1]
    psi_max = recovery_bound(p, p._psi0_arr, 0.0)
    return SaturationLevelConstants(c=c, eps_vec=eps_vec, psi_max=psi_max)
