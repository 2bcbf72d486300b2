"""Exception types shared across the package."""


class SymhnnError(Exception):
    """Base class for all package-specific errors."""


class DimensionMismatchError(SymhnnError, ValueError):
    """Operands live in configuration/phase spaces of different dimension."""


class DomainError(SymhnnError, ValueError):
    """Evaluation outside the valid domain (singularity, bad parameters)."""


class IntegrationError(SymhnnError, RuntimeError):
    """Time integration failed (step underflow or implicit solve divergence)."""

    def __init__(self, message: str, step: int | None = None, time: float | None = None):
        super().__init__(message)
        self.step = step
        self.time = time


class NumericError(SymhnnError, RuntimeError):
    """Non-finite values encountered where finite numbers are required."""


class DataError(SymhnnError, ValueError):
    """Malformed or inconsistent dataset files."""


class ConfigError(SymhnnError, ValueError):
    """Invalid experiment configuration (unknown keys, unresolvable paths)."""
