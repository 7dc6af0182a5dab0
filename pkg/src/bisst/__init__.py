"""Bidirectional single-stream proposals with attentive, context-gated captioning."""

from .geometry import AnchorSet, Interval, tiou
from .model import Model, ModelConfig, dense_caption
from .training import TrainConfig, train

__all__ = ["AnchorSet", "Interval", "Model", "ModelConfig", "TrainConfig", "dense_caption",
           "tiou", "train"]
__version__ = "0.1.0"
