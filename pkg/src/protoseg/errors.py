"""Exception hierarchy. Everything raised on purpose derives from ProtosegError."""


class ProtosegError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(ProtosegError):
    """Operand shapes are incompatible with the requested operation."""


class ConfigError(ProtosegError):
    """A configuration value (file key, hyperparameter, flag combo) is invalid."""


class ValidationError(ProtosegError):
    """Runtime data violated a documented precondition (non-binary mask, bad range)."""


class UsageError(ProtosegError):
    """An API was called out of protocol (backward twice, non-scalar backward)."""


class FormatError(ProtosegError):
    """A serialized artifact is malformed. The message names the offending field."""


class DegenerateEpisodeError(ProtosegError):
    """Episode construction could not produce usable foreground."""


class IncompleteEvaluationError(ProtosegError):
    """An aggregate metric was requested over a class set that was not fully covered."""


class TrainingError(ProtosegError):
    """Training aborted; carries enough context to reproduce the failing step."""
