"""Exception taxonomy shared across the library.

Errors are split by who can fix them: DomainError and ModelContractError
signal bad inputs (caller bugs), the numerical errors signal that a run
went bad in a way the caller may want to catch and report, ConfigError
signals an invalid experiment file.
"""

from __future__ import annotations

__all__ = [
    "SdelabError",
    "DomainError",
    "ModelContractError",
    "ConfigError",
    "NumericalError",
    "DivergenceError",
    "FixedPointError",
    "EstimationError",
]


class SdelabError(Exception):
    """Base class for all library errors."""


class DomainError(SdelabError, ValueError):
    """An argument is outside the documented domain (bad grid, bad theta, ...)."""


class ModelContractError(SdelabError, ValueError):
    """A model violates its class contract (e.g. a neutral model with G identically 0)."""


class ConfigError(SdelabError, ValueError):
    """An experiment config file is malformed or inconsistent."""


class NumericalError(SdelabError, RuntimeError):
    """Base class for runtime numerical failures."""


class DivergenceError(NumericalError):
    """Too many ensemble members hit the divergence guard for a reliable estimate."""

    def __init__(self, message, n_diverged=0, n_total=0):
        super().__init__(message)
        self.n_diverged = n_diverged
        self.n_total = n_total


class FixedPointError(NumericalError):
    """The implicit neutral-state fixed point did not converge."""


class EstimationError(NumericalError):
    """An ensemble estimate could not be formed (degenerate data, all paths dropped)."""
