"""Benchmark plants and reference signals.

Each plant exposes its order r, output dimension m, a state derivative
``rhs(state, u)`` and the output derivative stack ``outputs(state)`` of
shape (r, m).  The defining property of order r is that the stack depends
on the state only; the input first appears in the r-th output derivative.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ReferenceSignal",
    "make_reference",
    "MassOnCar",
    "LinearBIF",
    "pure_integrator",
    "ScalarPrototype",
    "blowup_closed_form",
]


@dataclass(frozen=True, eq=False)
class ReferenceSignal:
    """Reference trajectory with exact derivatives of every order.

    ``cosine`` is amplitude * cos(t) in every channel, ``zero`` is the zero
    signal, ``polynomial`` evaluates ascending coefficients shared across
    channels.  Derivatives are closed form, never finite differences.
    """

    kind: str = "cosine"
    m: int = 1
    amplitude: float = 1.0
    coeffs: tuple = ()

    def __post_init__(self):
        if self.kind not in ("cosine", "zero", "polynomial"):
            raise ValueError(f"unknown reference kind {self.kind!r}")
        object.__setattr__(self, "coeffs", tuple(float(c) for c in self.coeffs))
        if self.kind == "polynomial" and not self.coeffs:
            raise ValueError("polynomial reference needs coefficients")

    def eval(self, t: float, order: int = 0) -> np.ndarray:
        if self.kind == "zero":
            return np.zeros(self.m)
        if self.kind == "cosine":
            q = order % 4
            if q == 0:
                val = math.cos(t)
            elif q == 1:
                val = -math.sin(t)
            elif q == 2:
                val = -math.cos(t)
            else:
                val = math.sin(t)
            return np.full(self.m, self.amplitude * val)
        val = 0.0
        for j in range(order, len(self.coeffs)):
            fac = 1.0
            for n in range(j - order + 1, j + 1):
                fac *= n
            val += self.coeffs[j] * fac * t ** (j - order)
        return np.full(self.m, val)

    def stack(self, t: float, r: int) -> np.ndarray:
        """Derivatives 0..r-1 stacked as an (r, m) array."""
        out = np.empty((r, self.m))
        if self.kind == "zero":
            out.fill(0.0)
        elif self.kind == "cosine":
            c, s = math.cos(t), math.sin(t)
            cycle = (c, -s, -c, s)
            for i in range(r):
                out[i] = self.amplitude * cycle[i % 4]
        else:
            for i in range(r):
                out[i] = self.eval(t, i)
        return out


def make_reference(kind: str, m: int = 1, amplitude: float = 1.0, coeffs=()) -> ReferenceSignal:
    return ReferenceSignal(kind=kind, m=m, amplitude=amplitude, coeffs=tuple(coeffs))


@dataclass(frozen=True, eq=False)
class MassOnCar:
    """Mass on a spring-damper ramp mounted on a driven car.

    The ramp is inclined by ``theta``; the force u acts on the car.  State
    is (z, s, zdot, sdot): car position, position of the mass along the
    ramp, and their velocities.  Output y = z + s cos(theta) is the
    horizontal position of the mass, giving order r = 2 for theta in
    (0, pi/2) and r = 3 for theta = 0.
    """

    m1: float = 4.0
    m2: float = 1.0
    k: float = 2.0
    d: float = 1.0
    theta: float = math.pi / 4

    m = 1
    state_dim = 4

    def __post_init__(self):
        if self.m1 <= 0 or self.m2 <= 0 or self.k <= 0 or self.d <= 0:
            raise ValueError("m1, m2, k, d must be positive")
        if not 0.0 <= self.theta < math.pi / 2:
            raise ValueError("theta must lie in [0, pi/2)")
        ct = math.cos(self.theta)
        det = self.m2 * (self.m1 + self.m2 * math.sin(self.theta) ** 2)
        # explicit inverse of the (positive definite) mass matrix
        minv = np.array([[self.m2, -self.m2 * ct],
                         [-self.m2 * ct, self.m1 + self.m2]]) / det
        object.__setattr__(self, "_cos_theta", ct)
        object.__setattr__(self, "_det", det)
        object.__setattr__(self, "_minv", minv)

    @property
    def r(self) -> int:
        return 3 if self.theta == 0.0 else 2

    def rhs(self, state: np.ndarray, u: np.ndarray) -> np.ndarray:
        z, s, zd, sd = state
        f0 = float(u[0]) if np.ndim(u) else float(u)
        f1 = -self.k * s - self.d * sd
        mi = self._minv
        return np.array([
            zd,
            sd,
            mi[0, 0] * f0 + mi[0, 1] * f1,
            mi[1, 0] * f0 + mi[1, 1] * f1,
        ])

    def outputs(self, state: np.ndarray) -> np.ndarray:
        z, s, zd, sd = state
        ct = self._cos_theta
        if self.theta == 0.0:
            return np.array([[z + s], [zd + sd], [self.output_accel(state)]])
        return np.array([[z + s * ct], [zd + sd * ct]])

    def output_accel(self, state: np.ndarray) -> float:
        """Second output derivative, input-independent only for theta = 0."""
        if self.theta != 0.0:
            raise ValueError("output acceleration depends on the input for theta != 0")
        _, s, _, sd = state
        return -(self.k * s + self.d * sd) / self.m2


@dataclass(frozen=True, eq=False)
class LinearBIF:
    """Linear plant in chain-integrator form with linear internal dynamics.

    y^{(r)} = sum_i R_i y^{(i-1)} + S eta + Gamma u,   eta' = Q eta + P y.

    State is the flattened output derivative block (r*m entries) followed
    by eta (q entries).  q = 0 means no internal dynamics.  Gamma may be
    zero or sign-indefinite; nothing here requires otherwise.
    """

    R: tuple            # r matrices, each (m, m)
    S: np.ndarray       # (m, q)
    P: np.ndarray       # (q, m)
    Q: np.ndarray       # (q, q)
    Gamma: np.ndarray   # (m, m)
    eta0: np.ndarray    # (q,)

    def __post_init__(self):
        R = np.asarray(self.R, dtype=float)
        if R.ndim == 1:
            R = R.reshape(-1, 1, 1)
        if R.ndim != 3 or R.shape[1] != R.shape[2]:
            raise ValueError("R must be r square matrices")
        r, m = R.shape[0], R.shape[1]
        S = np.asarray(self.S, dtype=float).reshape(m, -1)
        q = S.shape[1]
        P = np.asarray(self.P, dtype=float).reshape(q, m)
        Q = np.asarray(self.Q, dtype=float).reshape(q, q)
        Gamma = np.asarray(self.Gamma, dtype=float).reshape(m, m)
        eta0 = np.asarray(self.eta0, dtype=float).reshape(q)
        for name, val in (("R", R), ("S", S), ("P", P), ("Q", Q),
                          ("Gamma", Gamma), ("eta0", eta0)):
            object.__setattr__(self, name, val)
        object.__setattr__(self, "_r", r)
        object.__setattr__(self, "_m", m)
        object.__setattr__(self, "_q", q)

    @property
    def r(self) -> int:
        return self._r

    @property
    def m(self) -> int:
        return self._m

    @property
    def q(self) -> int:
        return self._q

    @property
    def state_dim(self) -> int:
        return self._r * self._m + self._q

    def assemble_state(self, yblock, eta=None) -> np.ndarray:
        yblock = np.asarray(yblock, dtype=float).reshape(self._r * self._m)
        eta = self.eta0 if eta is None else np.asarray(eta, dtype=float).reshape(self._q)
        return np.concatenate([yblock, eta])

    def rhs(self, state: np.ndarray, u: np.ndarray) -> np.ndarray:
        r, m, q = self._r, self._m, self._q
        yb = state[:r * m].reshape(r, m)
        eta = state[r * m:]
        u = np.atleast_1d(np.asarray(u, dtype=float))
        top = np.einsum("ijk,ik->j", self.R, yb) if r else np.zeros(m)
        top = top + self.S @ eta + self.Gamma @ u
        out = np.empty_like(state)
        out[:(r - 1) * m] = state[m:r * m]
        out[(r - 1) * m:r * m] = top
        if q:
            out[r * m:] = self.Q @ eta + self.P @ yb[0]
        return out

    def outputs(self, state: np.ndarray) -> np.ndarray:
        return state[:self._r * self._m].reshape(self._r, self._m).copy()


def pure_integrator() -> LinearBIF:
    """The order-1 single-input chain y' = u (no internal dynamics)."""
    return LinearBIF(R=np.zeros((1, 1, 1)), S=np.zeros((1, 0)),
                     P=np.zeros((0, 1)), Q=np.zeros((0, 0)),
                     Gamma=np.ones((1, 1)), eta0=np.zeros(0))


@dataclass(frozen=True)
class ScalarPrototype:
    """Scalar plant y' = y^2 + u whose quadratic growth defeats small saturation levels."""

    y0: float = 1.0

    r = 1
    m = 1
    state_dim = 1

    def rhs(self, state: np.ndarray, u: np.ndarray) -> np.ndarray:
        y = state[0]
        f0 = float(u[0]) if np.ndim(u) else float(u)
        return np.array([y * y + f0])

    def outputs(self, state: np.ndarray) -> np.ndarray:
        return state.reshape(1, 1).copy()


def blowup_closed_form(M: float):
    """Escape-time solution of y' = y^2 - M from y(0) = 1.

    Returns (z, omega): the lower solution bound
    z(t) = sqrt(M) (sqrt(M) + 1 + (1 - sqrt(M)) e^{2 sqrt(M) t})
                 / (sqrt(M) + 1 - (1 - sqrt(M)) e^{2 sqrt(M) t})
    and its pole time omega = ln((1 + sqrt(M)) / (1 - sqrt(M))) / (2 sqrt(M))
    for M < 1.  For M >= 1 the denominator never vanishes and omega is inf.
    """
    if M <= 0:
        raise ValueError("M must be positive")
    s = math.sqrt(M)

    def z(t: float) -> float:
        g = (1.0 - s) * math.exp(2.0 * s * t)
        return s * (s + 1.0 + g) / (s + 1.0 - g)

    omega = math.inf if M >= 1.0 else math.log((1.0 + s) / (1.0 - s)) / (2.0 * s)
    return z, omega
