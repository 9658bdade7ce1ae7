"""Simulation and verification toolkit for input-constrained funnel control.

The feedback law keeps the tracking error inside dynamically generated
funnels whose radii widen whenever the input saturation is active and
recover their prescribed exponential shape afterwards.  The package closes
the loop over a family of benchmark plants, integrates it with a
barrier-aware adaptive stepper, and turns the closed-loop guarantees into
executable checks.
"""

from .controller import (ControllerEval, Saturation, baseline_phi, baseline_r2,
                         baseline_r3, cascade_to_derivatives, control_signal,
                         error_cascade, evaluate, funnel_rhs, saturate)
from .errors import (BarrierViolation, ConfigInvalid, FunnelViolation,
                     GridResolutionError, HighGainSearchError,
                     InitialConditionViolation, SingularKappa, UnsupportedPlant)
from .params import (DerivedConstants, FunnelParams, RatioBoundConstants,
                     SaturationLevelConstants, Surjection, containment_fractions,
                     lower_envelope, make_surjection, nominal_funnel,
                     ratio_bound_constants, recovery_bound, recovery_coeffs,
                     require_valid, saturation_level_constants, validate_params)
from .plants import (LinearBIF, MassOnCar, ReferenceSignal, ScalarPrototype,
                     blowup_closed_form, make_reference, pure_integrator)
from .sim import (BaselineTrace, Event, OdeResult, SimConfig, SimTrace,
                  closed_loop_rhs, integrate, integrate_baseline, integrate_ode,
                  saturation_intervals)
from .verify import (HighGainQuery, VerdictReport, blowup_oracle,
                     check_funnel_membership, check_lower_and_ratio_bounds,
                     check_recovery, chi_grid, invariant_set_sweep,
                     saturation_level)

__version__ = "0.1.0"
