"""Hybrid graph neural network for crowd counting and localization, on a numpy autodiff core."""

from .config import TrainConfig, load_config, parse_config
from .dfl import DflConfig
from .graph import HybridGraphConfig, propagate
from .model import HyGnn, model_forward
from .tensor import Tape, Tensor, backward

__all__ = [
    "DflConfig",
    "HyGnn",
    "HybridGraphConfig",
    "Tape",
    "Tensor",
    "TrainConfig",
    "backward",
    "load_config",
    "model_forward",
    "parse_config",
    "propagate",
]
