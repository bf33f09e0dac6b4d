"""Exception types shared across the package.

The CLI maps these onto process exit codes, so every error raised from
library code should be one of them (or an ``OSError`` for file problems).
"""


class CovopError(Exception):
    """Base class for all package errors."""


class ConfigError(CovopError, ValueError):
    """Invalid parameters or configuration.

    ``key`` names the offending configuration key when one is known.
    """

    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


class NumericalError(CovopError, ArithmeticError):
    """A numerical routine failed (non-convergence, indefinite operator, ...)."""
