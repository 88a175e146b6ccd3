"""Discrete energy and the per-step convex objective.

All position arrays here are plain ``ndarray`` of length N+1. Only the free
range ``[i_s, i_e]`` is ever read: ``y[i_s] = 0`` and ``y[i_e] = 1`` are the
pinned ends, ``y[i_s+1:i_e]`` are the unknowns.

The gradient and Hessian are taken with respect to the node inner product
``[.|.]``, i.e. they are the Euclidean derivatives of ``J`` divided by ``h``.
A zero of :func:`objective_gradient` is exactly a solution of the implicit
particle scheme.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid_ops import EdgeFunction
from .tridiag import TridiagonalMatrix


class OutsideFeasibleSetError(ValueError):
    """Positions are not strictly increasing on the free range."""


@dataclass(frozen=True)
class ProblemSpec:
    """One Wright-Fisher instance: initial density samples plus selection.

    ``s`` is the selection strength and ``Ne`` the effective population
    size; the drift force is ``4 * s * Ne`` per unit initial density.
    """

    f0: EdgeFunction
    s: float = 0.0
    Ne: float = 1.0
    selection_enabled: bool = False

    def __post_init__(self):
        if np.any(self.f0.values < 0.0) or not np.all(np.isfinite(self.f0.values)):
            raise ValueError("initial density samples must be finite and non-negative")

    @property
    def n(self) -> int:
        return self.f0.n

    @property
    def h(self) -> float:
        return self.f0.h

    @property
    def drift(self) -> float:
        """``4 s Ne`` when selection is on, else 0."""
        return 4.0 * self.s * self.Ne if self.selection_enabled else 0.0


def _free_slices(i_s: int, i_e: int):
    # interior nodes i_s+1..i_e-1, cells i_s+1..i_e (cell c spans nodes c-1, c)
    return slice(i_s + 1, i_e), slice(i_s, i_e)


def _check_range(n: int, free_range) -> tuple[int, int]:
    i_s, i_e = int(free_range[0]), int(free_range[1])
    if not 0 <= i_s < i_e <= n:
        raise ValueError(f"invalid free range ({i_s}, {i_e}) for N={n}")
    return i_s, i_e


@dataclass(frozen=True)
class ObjectiveContext:
    """Data of one implicit step: previous positions, time step, free range.

    The coefficient arrays over the free range are precomputed once per step
    since Newton evaluates the objective many times.
    """

    spec: ProblemSpec
    x_prev: np.ndarray
    tau: float
    free_range: tuple[int, int]
    # derived, length = number of free interior nodes / free cells
    weight: np.ndarray = field(init=False, repr=False)
    linear: np.ndarray = field(init=False, repr=False)
    cell_mass: np.ndarray = field(init=False, repr=False)
    log_cell_mass: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        x_prev = np.asarray(self.x_prev, dtype=float)
        object.__setattr__(self, "x_prev", x_prev)
        if self.tau <= 0.0:
            raise ValueError("tau must be positive")
        i_s, i_e = _check_range(self.spec.n, self.free_range)
        object.__setattr__(self, "free_range", (i_s, i_e))
        if x_prev.size != self.spec.n + 1:
            raise ValueError("x_prev must have N+1 entries")
        nodes_sl, cells_sl = _free_slices(i_s, i_e)
        xn = x_prev[nodes_sl]
        if np.any(np.diff(x_prev[i_s : i_e + 1]) <= 0.0):
            raise OutsideFeasibleSetError("previous positions are not strictly increasing")
        q = xn * (1.0 - xn)
        if np.any(q <= 0.0):
            raise OutsideFeasibleSetError("free particles must lie strictly inside (0, 1)")
        f0 = self.spec.f0.values
        fn = f0[nodes_sl]
        object.__setattr__(self, "weight", fn / q)
        object.__setattr__(
            self, "linear", fn * (1.0 - 2.0 * xn) / q - self.spec.drift * fn
        )
        b = 0.5 * (f0[1:] + f0[:-1])[cells_sl]
        object.__setattr__(self, "cell_mass", b)
        with np.errstate(divide="ignore"):
            object.__setattr__(self, "log_cell_mass", np.log(b))

    @property
    def h(self) -> float:
        return self.spec.h

    @property
    def n_free(self) -> int:
        i_s, i_e = self.free_range
        return i_e - i_s - 1


def _entropy(b: np.ndarray, log_b: np.ndarray, slope: np.ndarray) -> float:
    # sum of b*ln(b/slope); ln(b) - ln(slope) keeps wide-range weights finite
    mask = b > 0.0
    return float(np.sum(b[mask] * (log_b[mask] - np.log(slope[mask]))))


def energy_parts(x: np.ndarray, spec: ProblemSpec, free_range=None) -> tuple[float, float]:
    """Return the convex pair ``(E_c, E_e)`` with ``E = E_c - E_e``.

    ``E_c = (A f0 | ln(A f0 / D x))`` over free cells and
    ``E_e = -[f0 | ln(x(1-x))] + 4 s Ne [f0 | x]`` over free nodes.
    """
    x = np.asarray(x, dtype=float)
    n, h = spec.n, spec.h
    i_s, i_e = _check_range(n, (0, n) if free_range is None else free_range)
    nodes_sl, cells_sl = _free_slices(i_s, i_e)
    slope = np.diff(x[i_s : i_e + 1]) / h
    if np.any(slope <= 0.0):
        raise OutsideFeasibleSetError("positions outside Q: not strictly increasing")
    f0 = spec.f0.values
    b = 0.5 * (f0[1:] + f0[:-1])[cells_sl]
    with np.errstate(divide="ignore"):
        e_c = h * _entropy(b, np.log(b), slope)
    xi = x[nodes_sl]
    fi = f0[nodes_sl]
    q = xi * (1.0 - xi)
    if np.any(q <= 0.0):
        raise OutsideFeasibleSetError("free particles must lie strictly inside (0, 1)")
    e_e = -h * float(np.dot(fi, np.log(q))) + h * spec.drift * float(np.dot(fi, xi))
    return e_c, e_e


def discrete_energy(x: np.ndarray, spec: ProblemSpec, free_range=None) -> float:
    """Discrete total energy of the positions ``x`` on the free range.

    With selection on, the linear term ``-4 Ne s [f0 | x]`` is included.
    """
    e_c, e_e = energy_parts(x, spec, free_range)
    return e_c - e_e


def _slopes(y: np.ndarray, ctx: ObjectiveContext) -> np.ndarray:
    i_s, i_e = ctx.free_range
    return np.diff(y[i_s : i_e + 1]) / ctx.h


def objective(y: np.ndarray, ctx: ObjectiveContext, relative: bool = False) -> float:
    """Per-step objective ``J(y)``; ``inf`` on the boundary of (or outside) Q.

    With ``relative=True`` the linear term is measured from ``x^n``, which
    drops the constant ``[c | x^n]``. Near fixation that constant is of order
    ``h / eps0`` and would swamp differences of ``J`` in rounding.
    """
    y = np.asarray(y, dtype=float)
    slope = _slopes(y, ctx)
    if not np.all(slope > 0.0):
        return np.inf
    i_s, i_e = ctx.free_range
    yi = y[i_s + 1 : i_e]
    d = yi - ctx.x_prev[i_s + 1 : i_e]
    quad = 0.5 / ctx.tau * float(np.dot(ctx.weight * d, d))
    ent = _entropy(ctx.cell_mass, ctx.log_cell_mass, slope)
    lin = float(np.dot(ctx.linear, d if relative else yi))
    return ctx.h * (quad + ent + lin)


def objective_gradient(y: np.ndarray, ctx: ObjectiveContext) -> np.ndarray:
    """Residual of the implicit scheme at the free interior nodes.

    Component i is ``w_i (y_i - x^n_i)/tau + d_h(A f0 / D_h y)_i + c_i`` with
    ``w = f0/(x^n(1-x^n))`` and ``c = f0(1-2x^n)/(x^n(1-x^n)) - 4 s Ne f0``.
    """
    y = np.asarray(y, dtype=float)
    slope = _slopes(y, ctx)
    if not np.all(slope > 0.0):
        raise OutsideFeasibleSetError("gradient requested outside Q")
    i_s, i_e = ctx.free_range
    flux = ctx.cell_mass / slope
    d = y[i_s + 1 : i_e] - ctx.x_prev[i_s + 1 : i_e]
    return ctx.weight * d / ctx.tau + np.diff(flux) / ctx.h + ctx.linear


def objective_hessian(y: np.ndarray, ctx: ObjectiveContext) -> TridiagonalMatrix:
    y = np.asarray(y, dtype=float)
    slope = _slopes(y, ctx)
    if not np.all(slope > 0.0):
        raise OutsideFeasibleSetError("Hessian requested outside Q")
    k = ctx.cell_mass / (slope * slope) / ctx.h**2
    diag = ctx.weight / ctx.tau + k[:-1] + k[1:]
    return TridiagonalMatrix(diag, -k[1:-1])
