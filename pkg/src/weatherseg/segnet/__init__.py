"""Mini-UNet with manual backpropagation, trained with Adam."""

from .checkpoint import load_weights, save_weights
from .gradcheck import TINY_CONFIG, grad_check
from .layers import sparse_ce_loss
from .train import Adam, NumericalError, TrainConfig, TrainResult, train, write_history
from .unet import ConfigError, UNetConfig, backward, forward, init_weights, predict_mask

__all__ = [
    "load_weights", "save_weights", "TINY_CONFIG", "grad_check", "sparse_ce_loss", "Adam",
    "NumericalError", "TrainConfig", "TrainResult", "train", "write_history", "ConfigError",
    "UNetConfig", "backward", "forward", "init_weights", "predict_mask",
]
