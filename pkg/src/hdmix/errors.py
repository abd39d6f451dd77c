"""Exception types shared across the package."""

from __future__ import annotations


class ValidationError(ValueError):
    """Problem data violates a structural assumption (coercivity, rank, ranges)."""


class SolverError(RuntimeError):
    """An iterative solve failed to reach its tolerance."""

    def __init__(self, message: str, residual: float = float("nan"), node: int | None = None):
        super().__init__(message)
        self.residual = residual
        self.node = node


class UnsupportedKernelError(TypeError):
    """Operation requires an exponential memory kernel."""
