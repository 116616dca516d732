"""Fast entangling-gate pulse-sequence design for trapped ions.

Two-phase workflow: a global search over pulse-pair counts against a cheap
linearised infidelity, followed by local timing refinement against a full
classical ODE model of the ion motion at a finite laser repetition rate.
"""

from .trap import (
    CA40_MASS,
    MICROTRAP,
    PAUL,
    ModeDifference,
    ModeStructure,
    TrapConfiguration,
    chi_from_modes,
    equilibrium_positions,
    microtrap_distance_for_chi,
    modes_from_chi,
    normal_modes,
)

__version__ = "0.1.0"

__all__ = [
    "CA40_MASS",
    "MICROTRAP",
    "PAUL",
    "ModeDifference",
    "ModeStructure",
    "TrapConfiguration",
    "chi_from_modes",
    "equilibrium_positions",
    "microtrap_distance_for_chi",
    "modes_from_chi",
    "normal_modes",
    "__version__",
]
