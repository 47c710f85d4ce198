"""Session skip prediction: tensor autodiff core, model zoo, training, evaluation."""

from .errors import (
    ConfigurationError,
    ContractError,
    EvaluationError,
    MaskingError,
    SchemaError,
    SeqskipError,
    TrainingError,
    ValidationError,
)
from .tensor import Tensor

__version__ = "0.1.0"

__all__ = [
    "Tensor",
    "SeqskipError",
    "ConfigurationError",
    "SchemaError",
    "ValidationError",
    "ContractError",
    "MaskingError",
    "EvaluationError",
    "TrainingError",
    "__version__",
]
