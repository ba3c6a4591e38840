"""Exception types shared across the package."""

from __future__ import annotations


class DistSGDError(Exception):
    """Base class for all package errors."""


class InvalidArgument(DistSGDError, ValueError):
    pass


class ConstructionFailure(DistSGDError, RuntimeError):
    """A randomized construction (e.g. a connected random graph) ran out of retries."""


class InternalError(DistSGDError, RuntimeError):
    pass


class NumericalFailure(DistSGDError, ArithmeticError):
    """An iterative numerical routine failed to converge or hit a singular system.

    ``last_iterate`` and ``residual`` carry the state at the point of failure,
    when the routine has one.
    """

    def __init__(self, message: str, last_iterate=None, residual: float | None = None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.residual = residual


class ParseError(DistSGDError, ValueError):
    def __init__(self, message: str, line_no: int | None = None):
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)
        self.line_no = line_no


class ConfigError(DistSGDError, ValueError):
    """Bad or unknown configuration key. ``key`` names the offending entry."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key
