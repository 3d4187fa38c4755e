from __future__ import annotations

from typing import Optional


class TeichRecurError(ValueError):
    """Base class for every error raised by the package."""


class DomainError(TeichRecurError):
    """Input outside the domain of an operation (non-finite, non-positive)."""


class InvalidIsometryError(TeichRecurError):
    pass


class InvalidMatrixError(TeichRecurError):
    pass


class SingularConfigurationError(TeichRecurError):
    pass


class SingularDerivativeError(TeichRecurError):
    pass


class PreconditionError(TeichRecurError):
    """A documented precondition does not hold.

    ``eta`` carries the failing derivative tolerance when the precondition is
    the derivative-bound window of a polar change.
    """

    def __init__(self, message: str, eta: Optional[float] = None) -> None:
        super().__init__(message)
        self.eta = eta


class ConstructionError(TeichRecurError):
    pass


class DisconnectedSurfaceError(ConstructionError):
    pass


class BudgetExceededError(TeichRecurError):
    def __init__(self, message: str, budget: int) -> None:
        super().__init__(message)
        self.budget = budget


class InfeasibleRateError(TeichRecurError):
    pass


class NoRateError(TeichRecurError):
    pass


class NoDriftDetectedError(TeichRecurError):
    pass


class InsufficientDataError(TeichRecurError):
    pass


class LevelTooSmallError(TeichRecurError):
    pass


class ConfigError(TeichRecurError):
    def __init__(self, message: str, key: Optional[str] = None) -> None:
        super().__init__(message)
        self.key = key


class UsageError(TeichRecurError):
    pass
