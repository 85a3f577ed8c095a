"""Exception hierarchy shared by every module of the package."""

from __future__ import annotations


class HoldoutError(Exception):
    """Base class for all errors raised by generic_holdout."""


class SizeError(HoldoutError, ValueError):
    pass


class RangeError(HoldoutError, ValueError):
    pass


class DomainError(HoldoutError, ValueError):
    pass


class NormError(HoldoutError, ValueError):
    pass


class EmptyDataError(HoldoutError, ValueError):
    pass


class InsufficientDataError(HoldoutError, ValueError):
    pass


class ConfigError(HoldoutError, ValueError):
    pass


class LockedError(HoldoutError):
    """Raised on any validation call against a locked oracle."""

    def __init__(self, reason):
        self.reason = reason
        super().__init__(f"oracle is locked ({reason.value})")


class BudgetExceededError(HoldoutError):
    """A batch asked for more queries than the oracle has left."""


class TestTooWeakError(HoldoutError):
    """The submitted test cannot certify the oracle's per-test level."""

    __test__ = False  # keep pytest from collecting this as a test class


class PoolExhaustedError(HoldoutError):
    pass


class OverfitBudgetExhausted(HoldoutError):
    pass
