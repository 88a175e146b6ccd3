"""Lagrangian particle solver for Wright-Fisher genetic drift.

The density is transported by monotone particles on [0, 1]; each time step
minimises a convex objective by damped Newton, particles within ``eps0`` of
an end are frozen there, and the density is recovered from the fixed
particle masses.
"""

__version__ = "0.1.0"

from .delta import DeltaSpec, mass_interpolate, p_fix, solve_delta, solve_selection
from .energy import ObjectiveContext, ProblemSpec, discrete_energy, objective
from .grid_ops import CellFunction, EdgeFunction
from .newton import NewtonParams, damping_factor, newton_decrement, solve_step
from .stepper import (
    DensityField,
    Diagnostics,
    ParticleState,
    SolverParams,
    advance,
    apply_fixation,
    init_state,
    recover_density,
    simulate,
)

__all__ = [
    "CellFunction", "DeltaSpec", "DensityField", "Diagnostics", "EdgeFunction",
    "NewtonParams", "ObjectiveContext", "ParticleState", "ProblemSpec", "SolverParams",
    "advance", "apply_fixation", "damping_factor", "discrete_energy", "init_state",
    "mass_interpolate", "newton_decrement", "objective", "p_fix", "recover_density",
    "simulate", "solve_delta", "solve_selection", "solve_step",
]
