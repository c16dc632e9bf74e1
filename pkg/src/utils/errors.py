"""Exception hierarchy.

Every error also derives from the matching builtin, so callers may catch
``ValueError`` / ``RuntimeError`` without importing this module.
"""

from typing import Optional


class BpreError(Exception):
    """Base class for toolkit errors."""


class DomainError(BpreError, ValueError):
    """An argument lies outside its mathematical domain."""


class UnsupportedLawError(BpreError, ValueError):
    """The requested functional is not defined for this law."""


class CoverageError(BpreError, ValueError):
    """A tabulated estimate does not cover the region it is evaluated on."""


class InputError(BpreError, ValueError):
    """Empty or malformed sample input."""


class ConfigError(BpreError, ValueError):
    """Invalid experiment configuration."""


class EstimateQualityError(BpreError, RuntimeError):
    """A Monte Carlo estimate is unusable (e.g. nonpositive harmonic value)."""


class BudgetExhaustedError(BpreError, RuntimeError):
    """A rejection sampler accepted nothing within its proposal budget."""

    def __init__(self, message: str, rate_upper_bound: float):
        super().__init__(message)
        self.rate_upper_bound = rate_upper_bound


class InsufficientSampleError(BpreError, RuntimeError):
    """Too few conditioned samples for a statistical verdict."""

    def __init__(self, message: str, achieved: int, required: Optional[int] = None):
        super().__init__(message)
        self.achieved = achieved
        self.required = required
