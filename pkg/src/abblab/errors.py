"""Exception types shared across the package."""


class AbbError(Exception):
    """Base class for all package errors."""


class RuleError(AbbError, ValueError):
    """An offspring pmf or threshold table is malformed."""


class DomainError(AbbError, ValueError):
    """An argument lies outside the domain of a function."""


class ConfigurationError(AbbError, ValueError):
    """A configuration is inconsistent (CFL violation, non-odd rule, ...)."""


class PreconditionError(AbbError, ValueError):
    """A mathematical hypothesis required by an operation does not hold."""


class ConstructionError(AbbError, RuntimeError):
    """A certificate object could not be built or failed its post-checks."""

    def __init__(self, message, **diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics


class SpreadingError(AbbError, RuntimeError):
    """A tracked level set was lost during a front-tracking run."""
