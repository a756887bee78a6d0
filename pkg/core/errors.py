"""Exception types raised by the design pipeline and mapped to CLI exit codes."""

from __future__ import annotations

from typing import Optional


class SecureIsacError(Exception):
    """Base class for every error raised by this package."""

    exit_code = 1


class ConfigurationError(SecureIsacError, ValueError):
    """Invalid configuration value; ``field`` names the offending key."""

    exit_code = 2

    def __init__(self, message: str, *, field: Optional[str] = None) -> None:
        self.field = field
        if field and field not in message:
            message = f"{field}: {message}"
        super().__init__(message)


class InfeasibleDesignError(SecureIsacError):
    """No transmit frame satisfies the requested QoS/secrecy constraints."""

    exit_code = 3

    def __init__(self, message: str, *, max_slack: Optional[float] = None) -> None:
        self.max_slack = max_slack
        super().__init__(message)


class NumericalError(SecureIsacError, ArithmeticError):
    """A numerical routine failed (singular matrix, bad direction, solver crash)."""

    exit_code = 4


class SingularBfimError(NumericalError):
    """The Bayesian FIM could not be factorized."""


class LineSearchError(NumericalError):
    """The search direction is not a descent direction."""
