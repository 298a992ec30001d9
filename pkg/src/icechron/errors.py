"""Exception types shared across the package."""


class IceChronError(Exception):
    """Base class for library errors."""


class ValidationError(IceChronError, ValueError):
    """Bad inputs: malformed files, invalid parameters, broken invariants."""


class InfeasibleModelError(IceChronError, RuntimeError):
    """The observed data has probability zero under the requested model."""


class InferenceError(IceChronError, RuntimeError):
    """An optimizer failed in a way that cannot be reported as a result."""
