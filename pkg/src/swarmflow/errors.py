"""Exception types shared across the package."""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Array dimensions do not match what an operation expects."""


class NumericError(ArithmeticError):
    """Non-finite input or output in a numerical routine."""


class UncontrollableError(ValueError):
    """The pair (A, B) fails the Kalman rank test."""


class GramianSingularError(np.linalg.LinAlgError):
    """Cholesky factorization of a controllability Gramian failed.

    ``min_eigenvalue`` holds the smallest eigenvalue estimate of the
    offending (symmetrized) Gramian.
    """

    def __init__(self, message: str, min_eigenvalue: float):
        super().__init__(f"{message} (min eigenvalue {min_eigenvalue:.3e})")
        self.min_eigenvalue = min_eigenvalue


class CheckpointError(ValueError):
    """Malformed or incompatible checkpoint file."""


class TrainingDivergedError(RuntimeError):
    """Training loss blew up or became non-finite."""
