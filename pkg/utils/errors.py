"""
Exception hierarchy shared by the domain modules, the API and the CLI.

Routes map ``ValidationError`` to 422 and ``NumericalError`` to 500; the
command-line entry point maps them to exit codes 2 and 3.
"""

from __future__ import annotations
import math
from typing import List, Optional, Tuple


class DriverModelError(Exception):
    """Base class for every error raised by the toolkit."""


class ValidationError(DriverModelError, ValueError):
    """
    Invalid input: bad arguments, schema violations, malformed trial rows.

    ``rows`` holds ``(line_number, message)`` pairs when the error comes from
    a file so callers can report every offending line at once.
    """

    def __init__(self, message: str, rows: Optional[List[Tuple[int, str]]] = None):
        self.rows = list(rows or [])
        if self.rows:
            detail = "; ".join(f"line {ln}: {msg}" for ln, msg in self.rows)
            message = f"{message} ({detail})"
        super().__init__(message)


class NumericalError(DriverModelError, ArithmeticError):
    """A computation could not produce a finite, meaningful result."""


class GridStabilityError(NumericalError):
    """The evidence grid violates a stability bound of the explicit scheme."""

    def __init__(self, bound: str, value: float, limit: float):
        self.bound = bound
        self.value = float(value)
        self.limit = float(limit)
        super().__init__(
            f"grid too coarse: {bound} = {self.value:.4g} exceeds {self.limit:.4g}; "
            "refine dx/dt"
        )


class SingularCovarianceError(NumericalError):
    """Covariance matrix is singular; a ridge term is suggested."""

    def __init__(self, message: str, ridge: float):
        self.ridge = float(ridge)
        super().__init__(f"{message}; try adding a ridge of {self.ridge:.3g} to the diagonal")


def require_finite(**values: float) -> None:
    """Raise ValidationError naming the first non-finite keyword value."""
    for name, v in values.items():
        try:
            ok = math.isfinite(float(v))
        except (TypeError, ValueError):
            ok = False
        if not ok:
            raise ValidationError(f"{name} must be finite (got {v!r})")


class GridBudgetError(NumericalError):
    """A stable grid would need more nodes or steps than allowed."""

    def __init__(self, what: str, needed: int, allowed: int):
        self.what = what
        self.needed = int(needed)
        self.allowed = int(allowed)
        super().__init__(f"grid needs {self.needed} {what}, budget is {self.allowed}")
