"""Damped Newton iteration for the per-step objective on the open set Q."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .energy import ObjectiveContext, objective, objective_gradient, objective_hessian

LAMBDA_STAR = 2.0 - math.sqrt(3.0)
DECREASE_SLACK = 1e-12


class NewtonError(RuntimeError):
    def __init__(self, message: str, report: "NewtonReport"):
        super().__init__(message)
        self.report = report


class NewtonNonConvergence(NewtonError):
    pass


class InfeasibleStepError(NewtonError):
    pass


@dataclass(frozen=True)
class NewtonParams:
    lambda_prime: float = LAMBDA_STAR
    decrement_tol: float = 1e-8
    residual_tol: float = 1e-10
    max_iters: int = 100
    max_backtracks: int = 60

    def __post_init__(self):
        if not LAMBDA_STAR - 1e-15 <= self.lambda_prime < 1.0:
            raise ValueError(f"lambda_prime must lie in [2-sqrt(3), 1), got {self.lambda_prime}")
        if self.decrement_tol <= 0 or self.residual_tol <= 0:
            raise ValueError("Newton tolerances must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")


@dataclass
class NewtonReport:
    iterations: int = 0
    final_decrement: float = math.inf
    final_residual: float = math.inf
    converged: bool = False
    damping_history: list[tuple[float, float]] = field(default_factory=list)
    backtracks: int = 0
    stalled: bool = False

    def as_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "final_decrement": self.final_decrement,
            "final_residual": self.final_residual,
            "converged": self.converged,
            "backtracks": self.backtracks,
            "stalled": self.stalled,
            "damping_history": [list(p) for p in self.damping_history],
        }


def damping_factor(lam: float, params: NewtonParams = NewtonParams()) -> float:
    """Step length for Newton decrement ``lam``.

    ``1/lam`` above ``lambda_prime``, ``(1-lam)/(lam(3-lam))`` between
    ``lambda*`` and ``lambda_prime``, and a full step below ``lambda*``.
    """
    if lam > params.lambda_prime:
        return 1.0 / lam
    if lam >= LAMBDA_STAR:
        return (1.0 - lam) / (lam * (3.0 - lam))
    return 1.0


def _scale(ctx: ObjectiveContext) -> float:
    # self-concordance parameter a = h * min f0 over the free nodes
    i_s, i_e = ctx.free_range
    return ctx.h * float(np.min(ctx.spec.f0.values[i_s : i_e + 1]))


def _decrement(g: np.ndarray, step: np.ndarray, ctx: ObjectiveContext) -> float:
    # g, H are J', J'' divided by h, hence the extra factor h
    return math.sqrt(max(ctx.h * float(np.dot(g, step)), 0.0) / _scale(ctx))


def newton_decrement(y: np.ndarray, ctx: ObjectiveContext) -> float:
    """``sqrt(J'^T [J'']^{-1} J' / a)`` with ``a = h * min f0``."""
    g = objective_gradient(y, ctx)
    return _decrement(g, objective_hessian(y, ctx).solve(g), ctx)


def _is_feasible(y: np.ndarray, i_s: int, i_e: int) -> bool:
    seg = y[i_s : i_e + 1]
    return bool(np.all(seg[1:] > seg[:-1]))


def solve_step(ctx: ObjectiveContext, params: NewtonParams = NewtonParams(), on_iterate=None):
    """Minimise the step objective starting from ``x^n``.

    Returns ``(x_new, report)``. The damped step ``omega(lambda) * delta`` is
    halved while the trial point leaves Q or raises the objective by more
    than ``DECREASE_SLACK``.

    Stops when the decrement or the max-norm residual is below tolerance, or
    when full Newton steps stop contracting the decrement (below ``lambda*``
    exact arithmetic guarantees ``lambda+ <= (lambda/(1-lambda))**2 <
    lambda/2``, so a smaller contraction means rounding dominates). The last
    case is reported as converged with ``stalled=True``.

    ``on_iterate(k, y, J)`` is called after every accepted step, with ``J``
    measured relative to ``x^n`` (see :func:`objective`).
    """
    i_s, i_e = ctx.free_range
    y = ctx.x_prev.copy()
    report = NewtonReport()
    if ctx.n_free == 0:
        report.converged = True
        report.final_decrement = report.final_residual = 0.0
        return y, report

    free = slice(i_s + 1, i_e)
    j_val = objective(y, ctx, relative=True)
    prev_lam, prev_full = math.inf, False
    for k in range(params.max_iters + 1):
        g = objective_gradient(y, ctx)
        residual = float(np.max(np.abs(g)))
        delta = objective_hessian(y, ctx).solve(g)
        lam = _decrement(g, delta, ctx)
        report.final_decrement, report.final_residual = lam, residual
        if lam <= params.decrement_tol or residual <= params.residual_tol:
            report.converged = True
            return y, report
        if prev_full and lam > 0.5 * prev_lam:
            report.converged = report.stalled = True
            return y, report
        if k == params.max_iters:
            break
        omega = damping_factor(lam, params)
        report.damping_history.append((lam, omega))
        for _ in range(params.max_backtracks + 1):
            trial = y.copy()
            trial[free] -= omega * delta
            if _is_feasible(trial, i_s, i_e):
                j_trial = objective(trial, ctx, relative=True)
                if j_trial <= j_val + DECREASE_SLACK:
                    break
            omega *= 0.5
            report.backtracks += 1
        else:
            if not _is_feasible(trial, i_s, i_e):
                raise InfeasibleStepError("damped Newton step could not be kept inside Q", report)
            raise NewtonNonConvergence("no decrease along the Newton direction", report)
        prev_lam, prev_full = lam, lam < LAMBDA_STAR
        y, j_val = trial, j_trial
        report.iterations = k + 1
        if on_iterate is not None:
            on_iterate(k + 1, y, j_val)
    raise NewtonNonConvergence(
        f"damped Newton did not converge in {params.max_iters} iterations "
        f"(lambda={report.final_decrement:.3e}, residual={report.final_residual:.3e})",
        report,
    )
