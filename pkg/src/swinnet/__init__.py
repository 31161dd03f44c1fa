"""Two-stream RGB-D / RGB-T salient object detection on a small numpy autodiff engine."""

from .model import ModelConfig, Predictions, SwinNet
from .train import TrainConfig, train_loop

__all__ = ["ModelConfig", "Predictions", "SwinNet", "TrainConfig", "train_loop"]
__version__ = "0.1.0"
