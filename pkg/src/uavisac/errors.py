class UavIsacError(Exception):
    """Base class for all package errors."""


class ConfigError(UavIsacError, ValueError):
    """Malformed or invalid configuration."""


class InfeasibleError(UavIsacError):
    """No trajectory satisfies the energy/speed/area constraints."""


class NumericError(UavIsacError, ArithmeticError):
    """A numerical routine failed or hit an ill-posed instance."""


class SingularFIMError(NumericError):
    """Fisher information matrix is singular or too ill-conditioned to invert."""

    def __init__(self, message: str, cond: float = float("inf")):
        super().__init__(message)
        self.cond = cond
