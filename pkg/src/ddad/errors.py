"""Exception hierarchy for the ddad package."""


class DdadError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(DdadError):
    """Operand shapes are incompatible with the requested operation."""


class DomainError(DdadError):
    """Input values lie outside the mathematical domain of an operation."""


class GraphError(DdadError):
    """Misuse of the autograd graph (e.g. backward from a non-scalar)."""


class ConfigError(DdadError):
    """Invalid configuration or precondition violation."""


class FormatError(DdadError):
    """Malformed checkpoint or data file."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class NumericalError(DdadError):
    """Non-finite values encountered during optimization."""


class IngestionError(DdadError):
    """A data file could not be decoded."""


class EvaluationError(DdadError):
    """Evaluation cannot proceed (e.g. single-class AUC)."""
