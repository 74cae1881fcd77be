"""Simulation and phase-space analysis of the simplest passive dynamic walker."""

__version__ = "0.1.0"

from pdwalk.model import (
    FullState,
    SectionPoint,
    WalkerParams,
    equilibrium_jacobian,
    equilibrium_jacobian_spectrum,
    jacobian,
    linear_subspace_distance,
    stance_energy,
    vector_field,
)
from pdwalk.integrator import (
    FallReason,
    IntegratorConfig,
    SwingResult,
    integrate_swing,
    integrate_swing_backward,
)
from pdwalk.hybrid import StepOutcome, apply_impact, embed_section, iterate, step

__all__ = [
    "FallReason",
    "FullState",
    "IntegratorConfig",
    "SectionPoint",
    "StepOutcome",
    "SwingResult",
    "WalkerParams",
    "apply_impact",
    "embed_section",
    "equilibrium_jacobian",
    "equilibrium_jacobian_spectrum",
    "jacobian",
    "integrate_swing",
    "integrate_swing_backward",
    "iterate",
    "linear_subspace_distance",
    "stance_energy",
    "step",
    "vector_field",
]
