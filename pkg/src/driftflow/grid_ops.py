"""Grid functions and difference operators on the uniform Lagrangian grid.

Nodes sit at ``X_i = i*h`` (``i = 0..N``) and half-nodes at ``X_{i-1/2}``
(``i = 1..N``). Node-valued data lives in :class:`EdgeFunction`, cell-valued
data in :class:`CellFunction`.

Summation by parts::

    (D l | phi) = -[l | d phi] + l_N phi_{N-1/2} - l_0 phi_{1/2}
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class GridContractError(ValueError):
    """Operands do not live on the same grid."""


def _check_spacing(n: int, h: float) -> None:
    if not np.isclose(h * n, 1.0, rtol=4 * np.finfo(float).eps, atol=0.0):
        raise GridContractError(f"h*N must equal 1, got h={h!r}, N={n}")


@dataclass(frozen=True)
class EdgeFunction:
    """Values at the N+1 grid nodes."""

    values: np.ndarray
    h: float

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 1 or values.size < 3:
            raise GridContractError("an edge function needs N+1 >= 3 node values")
        _check_spacing(values.size - 1, self.h)
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        return self.values.size - 1

    @classmethod
    def from_callable(cls, func, n: int) -> "EdgeFunction":
        nodes = np.linspace(0.0, 1.0, n + 1)
        return cls(np.asarray(func(nodes), dtype=float) * np.ones(n + 1), 1.0 / n)


@dataclass(frozen=True)
class CellFunction:
    """Values at the N half-nodes."""

    values: np.ndarray
    h: float

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 1 or values.size < 2:
            raise GridContractError("a cell function needs N >= 2 values")
        _check_spacing(values.size, self.h)
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        return self.values.size


def nodes(n: int) -> np.ndarray:
    """The identity grid ``X_i = i/N``."""
    return np.arange(n + 1) / n


def midpoints(n: int) -> np.ndarray:
    return (np.arange(n) + 0.5) / n


def _same_grid(a, b) -> None:
    if a.values.size != b.values.size or a.h != b.h:
        raise GridContractError(
            f"grid mismatch: sizes {a.values.size}/{b.values.size}, h {a.h}/{b.h}"
        )


def inner_edge(l: EdgeFunction, g: EdgeFunction) -> float:
    """``[l|g] = h * sum_{i=1}^{N-1} l_i g_i``; the endpoints are excluded."""
    _same_grid(l, g)
    return l.h * float(np.dot(l.values[1:-1], g.values[1:-1]))


def inner_cell(phi: CellFunction, psi: CellFunction) -> float:
    _same_grid(phi, psi)
    return phi.h * float(np.dot(phi.values, psi.values))


def diff_edge_to_cell(l: EdgeFunction) -> CellFunction:
    return CellFunction(np.diff(l.values) / l.h, l.h)


def diff_cell_to_edge(phi: CellFunction) -> EdgeFunction:
    """Interior differences ``(phi_{i+1/2} - phi_{i-1/2}) / h``.

    Only nodes ``1..N-1`` are defined; the two endpoint slots hold 0 and must
    not be read.
    """
    out = np.zeros(phi.values.size + 1)
    out[1:-1] = np.diff(phi.values) / phi.h
    return EdgeFunction(out, phi.h)


def average_edge_to_cell(l: EdgeFunction) -> CellFunction:
    v = l.values
    return CellFunction(0.5 * (v[1:] + v[:-1]), l.h)
