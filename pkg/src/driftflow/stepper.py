"""Time stepping: implicit particle solve, boundary fixation, density recovery.

Particles are indexed ``0..N``. Those with index ``<= i_s`` sit at 0 and
those with index ``>= i_e`` sit at 1; both groups are frozen for good. Only
``i_s < i < i_e`` move.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterator

import numpy as np

from .energy import ObjectiveContext, ProblemSpec, discrete_energy
from .newton import NewtonParams, NewtonReport, solve_step

DEFAULT_EPS0 = 1e-10


@dataclass(frozen=True)
class SolverParams:
    tau: float
    eps0: float = DEFAULT_EPS0
    newton: NewtonParams = field(default_factory=NewtonParams)

    def __post_init__(self):
        if not self.tau > 0.0:
            raise ValueError("tau must be positive")
        if not 0.0 < self.eps0 <= 1e-6:
            raise ValueError("eps0 must lie in (0, 1e-6]")


@dataclass(frozen=True)
class ParticleState:
    x: np.ndarray
    m0: np.ndarray
    i_s: int
    i_e: int
    t: float = 0.0
    step_count: int = 0

    @property
    def n(self) -> int:
        return self.x.size - 1

    @property
    def free_range(self) -> tuple[int, int]:
        return self.i_s, self.i_e

    @property
    def steady(self) -> bool:
        """At most one free particle is left."""
        return self.i_e - self.i_s <= 2


@dataclass(frozen=True)
class DensityField:
    """Recovered density on the particles ``i_s..i_e``.

    ``masses[0]`` and ``masses[-1]`` are the boundary super-particles: all the
    mass bundled at 0 (resp. 1), including the particle at ``i_s`` (``i_e``).
    """

    positions: np.ndarray
    density: np.ndarray
    masses: np.ndarray
    free_range: tuple[int, int]


@dataclass(frozen=True)
class Diagnostics:
    time: float
    total_mass: float
    barycenter: float
    energy: float
    f_left: float
    f_right: float
    mass_left: float
    mass_right: float
    # energy of the implicit solve, before and after, on the same free range
    energy_before: float = math.nan
    energy_after: float = math.nan
    dissipation: float = math.nan
    newton_iterations: int = 0


def init_state(spec: ProblemSpec, N: int | None = None) -> ParticleState:
    n = spec.n
    if N is not None and N != n:
        raise ValueError(f"f0 is sampled on N={n} cells, not {N}")
    f0 = spec.f0.values
    if np.any(f0 < 0.0):
        raise ValueError("negative initial density sample")
    m0 = spec.h * f0.copy()
    m0[0] *= 0.5
    m0[-1] *= 0.5
    return ParticleState(np.arange(n + 1) / n, m0, 0, n)


def apply_fixation(x_new: np.ndarray, state: ParticleState, eps0: float = DEFAULT_EPS0) -> ParticleState:
    """Snap particles within ``eps0`` of an end onto it and update ``i_s, i_e``."""
    x = np.array(x_new, dtype=float)
    left = x <= eps0
    right = x >= 1.0 - eps0
    x[left] = 0.0
    x[right] = 1.0
    i_s = max(state.i_s, int(np.flatnonzero(left).max()))
    i_e = min(state.i_e, int(np.flatnonzero(right).min()))
    if i_e <= i_s:
        # bands met; keep the configuration ordered
        i_e = i_s + 1
    return replace(state, x=x, i_s=i_s, i_e=i_e)


def density_from_masses(
    x: np.ndarray, masses: np.ndarray, i_s: int, i_e: int, eps0: float = DEFAULT_EPS0
) -> DensityField:
    """Density at particles ``i_s..i_e`` carrying per-particle ``masses``.

    Interior particles spread their mass over half the neighbour span. The
    particle at ``i_s`` adds a spike ``(2/eps0) * sum(masses[:i_s])`` for the
    mass bundled beneath it, and the one at ``i_e`` mirrors that.
    """
    pos = x[i_s : i_e + 1]
    m = masses[i_s : i_e + 1]
    dens = np.empty_like(pos)
    if pos.size > 2:
        dens[1:-1] = m[1:-1] / (0.5 * (pos[2:] - pos[:-2]))
    bundled_left = float(np.sum(masses[:i_s]))
    bundled_right = float(np.sum(masses[i_e + 1 :]))
    dens[0] = 2.0 / eps0 * bundled_left + m[0] / (0.5 * (pos[1] - pos[0]))
    dens[-1] = 2.0 / eps0 * bundled_right + m[-1] / (0.5 * (pos[-1] - pos[-2]))
    lumped = m.copy()
    lumped[0] += bundled_left
    lumped[-1] += bundled_right
    return DensityField(pos.copy(), dens, lumped, (i_s, i_e))


def recover_density(state: ParticleState, eps0: float = DEFAULT_EPS0) -> DensityField:
    """Density of the current particle configuration.

    Before any fixation this reduces to ``f0(X_0) h / (x_1 - x_0)`` at the
    left end (and its mirror at the right end).
    """
    return density_from_masses(state.x, state.m0, state.i_s, state.i_e, eps0)


def compute_diagnostics(field: DensityField, state: ParticleState, spec: ProblemSpec, **extra) -> Diagnostics:
    return Diagnostics(
        time=state.t,
        total_mass=float(np.sum(field.masses)),
        barycenter=float(np.dot(field.masses, field.positions)),
        energy=discrete_energy(state.x, spec, state.free_range),
        f_left=float(field.density[0]),
        f_right=float(field.density[-1]),
        mass_left=float(field.masses[0]),
        mass_right=float(field.masses[-1]),
        **extra,
    )


def advance(state: ParticleState, spec: ProblemSpec, solver: SolverParams):
    """One time step; returns ``(state, field, diagnostics)``.

    Raises the Newton errors of :func:`driftflow.newton.solve_step` unchanged.
    """
    ctx = ObjectiveContext(spec, state.x, solver.tau, state.free_range)
    x_new, report = solve_step(ctx, solver.newton)
    e_before = discrete_energy(state.x, spec, state.free_range)
    e_after = discrete_energy(x_new, spec, state.free_range)
    d = (x_new - state.x)[state.i_s + 1 : state.i_e]
    dissipation = spec.h * float(np.dot(ctx.weight * d, d)) / solver.tau**2
    step = state.step_count + 1
    moved = replace(state, t=step * solver.tau, step_count=step)
    new_state = apply_fixation(x_new, moved, solver.eps0)
    field = recover_density(new_state, solver.eps0)
    diag = compute_diagnostics(
        field,
        new_state,
        spec,
        energy_before=e_before,
        energy_after=e_after,
        dissipation=dissipation,
        newton_iterations=report.iterations,
    )
    return new_state, field, diag


@dataclass
class Trajectory:
    """Result of :func:`simulate`."""

    state: ParticleState
    field: DensityField
    history: list[Diagnostics]
    snapshots: dict[float, tuple[ParticleState, DensityField]]
    reports: list[NewtonReport] = field(default_factory=list)


def run_steps(
    spec: ProblemSpec, solver: SolverParams, n_steps: int, state: ParticleState | None = None
) -> Iterator[tuple[ParticleState, DensityField, Diagnostics]]:
    """Yield after every step; stops early once the state is steady."""
    state = init_state(spec) if state is None else state
    for _ in range(n_steps):
        if state.steady:
            return
        state, fld, diag = advance(state, spec, solver)
        yield state, fld, diag


def simulate(
    spec: ProblemSpec,
    solver: SolverParams,
    t_end: float,
    output_times: list[float] | None = None,
    stride: int = 1,
    on_step: Callable[[ParticleState, DensityField, Diagnostics], None] | None = None,
) -> Trajectory:
    """Run to ``t_end``. Diagnostics are kept every ``stride`` steps.

    A steady state (one free particle or none) ends the run early; pending
    output times then receive the final snapshot.
    """
    n_steps = int(round(t_end / solver.tau))
    wanted = {int(round(t / solver.tau)): t for t in (output_times or [])}
    state = init_state(spec)
    fld = recover_density(state, solver.eps0)
    history = [compute_diagnostics(fld, state, spec)]
    snapshots = {}
    if 0 in wanted:
        snapshots[wanted.pop(0)] = (state, fld)
    diag = history[0]
    for state, fld, diag in run_steps(spec, solver, n_steps, state):
        if state.step_count % stride == 0:
            history.append(diag)
        if state.step_count in wanted:
            snapshots[wanted.pop(state.step_count)] = (state, fld)
        if on_step is not None:
            on_step(state, fld, diag)
    if history[-1] is not diag:
        history.append(diag)
    for t in wanted.values():
        snapshots[t] = (state, fld)
    return Trajectory(state, fld, history, snapshots)
