"""Dirac-delta initial data and semi-selection.

A delta at ``x0`` is approximated by a narrow Gaussian and written as the
difference of two positive problems: ``w0 = offset + gaussian`` and
``g0 = offset``. Both are stepped in lockstep on their own particles; the
``g`` masses are moved onto the ``w`` particles by exact integration of a
piecewise-constant mass density, and ``f = W - G`` is formed there.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .energy import ProblemSpec
from .grid_ops import EdgeFunction, nodes
from .newton import NewtonError
from .stepper import (
    DEFAULT_EPS0,
    DensityField,
    Diagnostics,
    ParticleState,
    SolverParams,
    advance,
    density_from_masses,
    init_state,
)

MAX_SELECTION = 0.01


class SubproblemError(RuntimeError):
    """One of the two positive sub-runs failed."""

    def __init__(self, which: str, cause: NewtonError):
        super().__init__(f"{which}-problem: {cause}")
        self.which = which
        self.report = cause.report


@dataclass(frozen=True)
class DeltaSpec:
    x0: float
    sigma: float = 0.01
    offset: float = 10.0

    def __post_init__(self):
        if not 0.0 < self.x0 < 1.0:
            raise ValueError("x0 must lie in (0, 1)")
        if self.sigma <= 0.0 or self.offset <= 0.0:
            raise ValueError("sigma and offset must be positive")


@dataclass(frozen=True)
class InterpolationResult:
    target_masses: np.ndarray
    target_density: np.ndarray
    free_range: tuple[int, int]


def _cumulative_mass(state: ParticleState, masses: np.ndarray):
    """Breakpoints and values of the cumulative free-mass function on [0, 1]."""
    i_s, i_e = state.free_range
    x = state.x[i_s : i_e + 1]
    edges = np.concatenate(([0.0], 0.5 * (x[1:] + x[:-1]), [1.0]))
    cum = np.concatenate(([0.0], np.cumsum(masses[i_s : i_e + 1])))
    return edges, cum


def mass_interpolate(
    x: ParticleState,
    y: ParticleState,
    masses: np.ndarray | None = None,
    eps0: float = DEFAULT_EPS0,
) -> InterpolationResult:
    """Move the masses carried by particles ``x`` onto particles ``y``.

    Free ``x`` particles define a piecewise-constant mass density on their
    control volumes, which is integrated exactly over each free ``y`` control
    volume. Mass bundled at an end of ``x`` (particles below ``i_s`` or above
    ``i_e``) is shared equally among the particles bundled at that end of
    ``y``; if ``y`` has none there it goes to ``y``'s end particle.

    ``masses`` defaults to ``x.m0``.
    """
    m_x = x.m0 if masses is None else np.asarray(masses, dtype=float)
    n = y.n
    i_s, i_e = x.free_range
    j_s, j_e = y.free_range
    edges, cum = _cumulative_mass(x, m_x)

    yf = y.x[j_s : j_e + 1]
    y_edges = np.concatenate(([0.0], 0.5 * (yf[1:] + yf[:-1]), [1.0]))
    m_y = np.zeros(n + 1)
    m_y[j_s : j_e + 1] = np.diff(np.interp(y_edges, edges, cum))

    left = float(np.sum(m_x[:i_s]))
    right = float(np.sum(m_x[i_e + 1 :]))
    if j_s > 0:
        m_y[:j_s] += left / j_s
    else:
        m_y[0] += left
    if j_e < n:
        m_y[j_e + 1 :] += right / (n - j_e)
    else:
        m_y[n] += right
    field = density_from_masses(y.x, m_y, j_s, j_e, eps0)
    return InterpolationResult(m_y, field.density, (j_s, j_e))


def gaussian_initial(delta: DeltaSpec, n: int) -> tuple[EdgeFunction, EdgeFunction]:
    """Node samples ``(w0, g0)``; the Gaussian part carries unit particle mass."""
    X = nodes(n)
    bump = np.exp(-0.5 * ((X - delta.x0) / delta.sigma) ** 2)
    weights = np.full(n + 1, 1.0 / n)
    weights[[0, -1]] *= 0.5
    bump /= float(np.dot(weights, bump))
    return EdgeFunction(delta.offset + bump, 1.0 / n), EdgeFunction(np.full(n + 1, delta.offset), 1.0 / n)


def signed_diagnostics(field: DensityField, t: float, newton_iterations: int = 0) -> Diagnostics:
    """Total probability, expectation and boundary quantities of ``f = W - G``.

    Signed data has no entropy, so ``energy`` is NaN.
    """
    return Diagnostics(
        time=t,
        total_mass=float(np.sum(field.masses)),
        barycenter=float(np.dot(field.masses, field.positions)),
        energy=math.nan,
        f_left=float(field.density[0]),
        f_right=float(field.density[-1]),
        mass_left=float(field.masses[0]),
        mass_right=float(field.masses[-1]),
        newton_iterations=newton_iterations,
    )


def _subtract(w: ParticleState, g: ParticleState, eps0: float) -> DensityField:
    moved = mass_interpolate(g, w, eps0=eps0)
    return density_from_masses(w.x, w.m0 - moved.target_masses, w.i_s, w.i_e, eps0)


def iter_delta(
    delta: DeltaSpec,
    n: int,
    solver: SolverParams,
    t_end: float,
    s: float = 0.0,
    Ne: float = 1.0,
    selection: bool = False,
) -> Iterator[tuple[ParticleState, ParticleState, DensityField, Diagnostics]]:
    """Step the ``g`` and ``w`` problems together, yielding ``f = W - G``.

    Yields ``(w_state, g_state, field, diagnostics)`` at t = 0 and after every
    step. A sub-run that has reached a steady state stays frozen.
    """
    w0, g0 = gaussian_initial(delta, n)
    spec_w = ProblemSpec(w0, s=s, Ne=Ne, selection_enabled=selection)
    spec_g = ProblemSpec(g0, s=s, Ne=Ne, selection_enabled=selection)
    w, g = init_state(spec_w), init_state(spec_g)
    field = _subtract(w, g, solver.eps0)
    yield w, g, field, signed_diagnostics(field, 0.0)
    for step in range(1, int(round(t_end / solver.tau)) + 1):
        iters = 0
        for name, spec in (("g", spec_g), ("w", spec_w)):
            state = g if name == "g" else w
            if state.steady:
                state = ParticleState(state.x, state.m0, state.i_s, state.i_e, step * solver.tau, step)
            else:
                try:
                    state, _, diag = advance(state, spec, solver)
                except NewtonError as exc:
                    raise SubproblemError(name, exc) from exc
                iters += diag.newton_iterations
            if name == "g":
                g = state
            else:
                w = state
        field = _subtract(w, g, solver.eps0)
        yield w, g, field, signed_diagnostics(field, step * solver.tau, iters)


def _collect(iterator, solver: SolverParams, output_times):
    times = list(output_times)
    if any(b <= a for a, b in zip(times, times[1:])):
        raise ValueError("output_times must be increasing")
    wanted = {int(round(t / solver.tau)): t for t in times}
    out = []
    for w, _, field, diag in iterator:
        if w.step_count in wanted:
            out.append((field, diag))
    return out


def solve_delta(
    delta: DeltaSpec,
    n: int,
    solver: SolverParams,
    output_times,
    s: float = 0.0,
    Ne: float = 1.0,
    selection: bool = False,
) -> list[DensityField]:
    """Signed density ``f = W - G`` on the ``w`` particles at each output time."""
    t_end = max(output_times) if len(output_times) else 0.0
    return [f for f, _ in _collect(iter_delta(delta, n, solver, t_end, s, Ne, selection), solver, output_times)]


def solve_selection(
    delta: DeltaSpec, s: float, Ne: float, n: int, solver: SolverParams, output_times
) -> list[tuple[DensityField, Diagnostics]]:
    """Delta data under semi-selection ``M(x) = s x (1-x)``."""
    if abs(s) > MAX_SELECTION:
        raise ValueError(f"|s| must be at most {MAX_SELECTION}, got {s}")
    if Ne <= 0.0:
        raise ValueError("Ne must be positive")
    t_end = max(output_times) if len(output_times) else 0.0
    return _collect(iter_delta(delta, n, solver, t_end, s, Ne, True), solver, output_times)


def p_fix(x0: float, s: float, Ne: float) -> float:
    """Probability of ultimate fixation from frequency ``x0``.

    ``(1 - exp(-4 x0 s Ne)) / (1 - exp(-4 s Ne))``, with a series for tiny
    ``s Ne`` where the closed form cancels.
    """
    if not 0.0 <= x0 <= 1.0:
        raise ValueError("x0 must lie in [0, 1]")
    c = 4.0 * s * Ne
    if abs(c) < 1e-8:
        # (1 - e^{-c x}) / (1 - e^{-c}) = x (1 + c (1 - x) / 2 + O(c^2))
        return x0 * (1.0 + 0.5 * c * (1.0 - x0))
    return math.expm1(-c * x0) / math.expm1(-c)
