"""Call admission control for pooled multi-RAT channels: analytical models,
simulation, and a recurrent RBF admission controller."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    CacLabError,
    ConfigError,
    InvalidParameterError,
    NumericalError,
    ResourceLimitError,
    TrainingError,
)
from .traffic import ClassId, SystemConfig, ThresholdSet, TrafficClass, canonical_classes  # noqa: E402

__all__ = [
    "CacLabError", "ClassId", "ConfigError", "InvalidParameterError", "NumericalError",
    "ResourceLimitError", "SystemConfig", "ThresholdSet", "TrafficClass", "TrainingError",
    "__version__", "canonical_classes",
]
