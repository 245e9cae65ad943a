"""
Exception types raised by the separation solvers.
"""

from typing import Optional


class ShapeError(ValueError):
    """Array dimensions do not match what an operation expects."""


class ParameterError(ValueError):
    """A numeric parameter is outside its valid range."""


class GeometryError(ValueError):
    """A phantom or patch geometry does not fit inside the image."""


class SolverDivergenceError(RuntimeError):
    """An iterative solver produced a non-finite or diverging iterate."""

    def __init__(self, method: str, iteration: int, detail: str = "",
                 outer_iteration: Optional[int] = None):
        self.method = method
        self.iteration = iteration
        self.outer_iteration = outer_iteration
        self.detail = detail
        where = f"iteration {iteration}"
        if outer_iteration is not None:
            where = f"outer iteration {outer_iteration}, {where}"
        message = f"{method} diverged at {where}"
        if detail:
            message = f"{message}: {detail}"
        super().__init__(message)

    def with_outer(self, outer_iteration: int) -> "SolverDivergenceError":
        return SolverDivergenceError(self.method, self.iteration, self.detail, outer_iteration)
