"""Fine-grained scalable learned image codec."""
from .config import ModelConfig, TrainConfig
from .model import ScalableCodec
from .transforms import channel_select

__all__ = ["ModelConfig", "ScalableCodec", "TrainConfig", "channel_select"]
__version__ = "0.1.0"
