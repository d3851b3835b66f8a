"""Exception types shared by every module.

Each class maps to one CLI exit code (see :mod:`phi4lab.cli`).
"""


class Phi4LabError(Exception):
    exit_code = 1


class InputError(Phi4LabError, ValueError):
    """Invalid arguments or configuration."""

    exit_code = 2


class DomainError(InputError):
    """A value lies outside the region where an operation is defined."""


class CapacityError(Phi4LabError):
    """A memory or table-size budget would be exceeded."""

    exit_code = 3

    def __init__(self, message, cap=None, requested=None):
        super().__init__(message)
        self.cap = cap
        self.requested = requested


class NumericError(Phi4LabError, ArithmeticError):
    """A quadrature or solver failed to reach its tolerance."""

    exit_code = 1

    def __init__(self, message, achieved=None):
        super().__init__(message)
        self.achieved = achieved


class IntegrityError(Phi4LabError):
    """A file listed in a run manifest is missing or has been modified."""

    exit_code = 4


class InconclusiveTrend(Phi4LabError):
    exit_code = 5
