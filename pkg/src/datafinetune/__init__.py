"""Learn a universal input perturbation that adapts data to a frozen classifier."""
from .data import AttributeSchema, Dataset, ShiftSpec, gen_blobs, gen_toy_images, one_hot, shift, split
from .dft import DftConfig, DftResult, Perturbation, apply, learn_perturbation, transform
from .errors import (
    DftError,
    DimensionError,
    FormatError,
    FrozenModelError,
    LabelError,
    ValidationError,
    VersionError,
)
from .model import FeedForwardModel, TrainConfig, fine_tune, fit, forward, grad_input, train

__version__ = "0.1.0"

__all__ = [
    "AttributeSchema",
    "Dataset",
    "ShiftSpec",
    "gen_blobs",
    "gen_toy_images",
    "one_hot",
    "shift",
    "split",
    "DftConfig",
    "DftResult",
    "Perturbation",
    "apply",
    "learn_perturbation",
    "transform",
    "DftError",
    "DimensionError",
    "FormatError",
    "FrozenModelError",
    "LabelError",
    "ValidationError",
    "VersionError",
    "FeedForwardModel",
    "TrainConfig",
    "fine_tune",
    "fit",
    "forward",
    "grad_input",
    "train",
]
