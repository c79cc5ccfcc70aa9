"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes, so new error kinds should subclass one
of the three families below rather than ``Exception`` directly.
"""


class SFTError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class DomainError(SFTError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""

    exit_code = 2


class ConfigError(DomainError):
    """Invalid run configuration; carries the full list of violations."""

    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class UsageError(DomainError):
    """Inputs are individually valid but incompatible with each other."""


class ConstraintError(DomainError):
    """A geometric constraint (e.g. vertex widths) cannot be satisfied."""


class NumericError(SFTError, ArithmeticError):
    """A numerical procedure failed to converge or produced unusable output."""

    exit_code = 3

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class CapacityError(SFTError, MemoryError):
    """A configured size bound would be exceeded."""

    exit_code = 4
