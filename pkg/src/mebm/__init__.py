"""MEG phoneme decoding: numpy autodiff, dual-stream convolutional model, training and metrics."""

from .config import VARIANTS, AblationFlags, ModelConfig
from .model import Model, build_model, forward, load_checkpoint, save_checkpoint

__version__ = "0.1.0"

__all__ = [
    "AblationFlags", "Model", "ModelConfig", "VARIANTS", "build_model", "forward",
    "load_checkpoint", "save_checkpoint",
]
