"""Symmetric tridiagonal matrices and their solves."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, solveh_banded


class SingularHessianError(ArithmeticError):
    """The tridiagonal system is not numerically positive definite."""


@dataclass(frozen=True)
class TridiagonalMatrix:
    """Symmetric tridiagonal matrix stored by its two diagonals.

    ``diag`` has length n, ``off`` has length n-1 (entries (i, i+1)).
    """

    diag: np.ndarray
    off: np.ndarray

    @property
    def size(self) -> int:
        return self.diag.size

    def to_dense(self) -> np.ndarray:
        return np.diag(self.diag) + np.diag(self.off, 1) + np.diag(self.off, -1)

    def matvec(self, v: np.ndarray) -> np.ndarray:
        out = self.diag * v
        out[:-1] += self.off * v[1:]
        out[1:] += self.off * v[:-1]
        return out

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Cholesky solve of ``T u = rhs`` (banded LAPACK, O(n))."""
        if self.size == 1:
            if not self.diag[0] > 0.0:
                raise SingularHessianError("non-positive 1x1 Hessian")
            return rhs / self.diag
        ab = np.empty((2, self.size))
        ab[0, 0] = 0.0
        ab[0, 1:] = self.off
        ab[1] = self.diag
        try:
            return solveh_banded(ab, rhs, check_finite=True)
        except (LinAlgError, ValueError) as exc:
            raise SingularHessianError(str(exc)) from exc
