"""Exception types shared across the package."""


class FunnelViolation(Exception):
    """A cascade error left its funnel: ||e_i|| >= psi_i at level ``level``.

    Raised by the controller algebra; during integration it signals
    integrator overshoot and triggers step rejection upstream.
    """

    def __init__(self, level: int, err_norm: float, psi: float):
        self.level = level
        self.err_norm = err_norm
        self.psi = psi
        super().__init__(
            f"funnel violation at level {level}: ||e_{level}|| = {err_norm:.6g} "
            f">= psi_{level} = {psi:.6g}"
        )


class SingularKappa(Exception):
    """Saturation deficit is positive while ||e_r|| is below the guard radius.

    A positive deficit with a tiny top-level error is impossible in exact
    arithmetic, so this flags a numerically inconsistent state rather than
    being silently clamped.
    """

    def __init__(self, kappa: float, e_r_norm: float, guard: float):
        self.kappa = kappa
        self.e_r_norm = e_r_norm
        self.guard = guard
        super().__init__(
            f"kappa = {kappa:.6g} > 0 with ||e_r|| = {e_r_norm:.6g} <= guard {guard:.6g}"
        )


class BarrierViolation(Exception):
    """A baseline controller's barrier argument reached its pole."""

    def __init__(self, argument: float, where: str = ""):
        self.argument = argument
        self.where = where
        suffix = f" in {where}" if where else ""
        super().__init__(f"barrier argument {argument:.6g} reached 1{suffix}")


class InitialConditionViolation(Exception):
    """Initial cascade errors do not fit inside the initial funnels."""


class ConfigInvalid(Exception):
    """A run configuration failed validation."""


class UnsupportedPlant(Exception):
    """The requested operation is restricted to a narrower plant class."""


class HighGainSearchError(Exception):
    """The gain search for a saturation level exhausted its grid.

    Carries the largest high-gain value reached so callers can inspect how
    far the search got.
    """

    def __init__(self, achieved_chi: float, target_chi: float, eps_r: float):
        self.achieved_chi = achieved_chi
        self.target_chi = target_chi
        self.eps_r = eps_r
        super().__init__(
            f"gain search exhausted: chi reached {achieved_chi:.6g} < target "
            f"{target_chi:.6g} at eps_r = {eps_r}"
        )


class GridResolutionError(Exception):
    """Grid refinement moved a computed saturation level by more than 1%."""

    def __init__(self, level: float, refined_level: float, certificate: dict):
        self.level = level
        self.refined_level = refined_level
        self.certificate = certificate
        super().__init__(
            f"saturation level unstable under grid refinement: "
            f"{level:.6g} vs {refined_level:.6g}"
        )
