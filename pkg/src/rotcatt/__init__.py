"""RotCAtt-TransUNet++ at desk scale: architecture, losses, metrics, synthetic
data and a command-line harness."""

from .config import (
    DESK_CONFIG,
    REFERENCE_CONFIG,
    ConfigError,
    ModelConfig,
    ShapeError,
    ShapePlan,
    derive_shapes,
    validate_tensor,
)
from .model import RotCAttTransUNetPP, count_parameters

__version__ = "0.1.0"
