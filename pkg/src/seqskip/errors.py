"""Exception types shared across the toolkit."""


class SeqskipError(Exception):
    """Base class for all toolkit errors."""


class ConfigurationError(SeqskipError, ValueError):
    """Inconsistent layer, model, or run configuration."""


class SchemaError(SeqskipError, ValueError):
    """An input file does not match the declared schema."""


class ValidationError(SeqskipError, ValueError):
    """Well-formed input that violates a documented bound."""


class ContractError(SeqskipError, RuntimeError):
    """An API was called in a way its contract forbids."""


class MaskingError(SeqskipError, ValueError):
    """A mask leaves no valid element where at least one is required."""


class EvaluationError(SeqskipError, ValueError):
    """A loss or metric was evaluated on an empty or inconsistent set."""


class TrainingError(SeqskipError, RuntimeError):
    """Training aborted, e.g. on a non-finite loss."""
