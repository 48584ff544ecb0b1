"""ADRD single-image super-resolution on a small numpy autodiff core."""
from .blocks import ADRD, NetworkConfig, export_weight_matrices, format_weight_matrices
from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import gradcheck
from .tensor import Parameter, Tensor, no_grad
from .train import Adam, TrainConfig, lr_at_epoch, train

__version__ = "0.1.0"

__all__ = [
    "ADRD",
    "Adam",
    "NetworkConfig",
    "Parameter",
    "Tensor",
    "TrainConfig",
    "export_weight_matrices",
    "format_weight_matrices",
    "gradcheck",
    "load_checkpoint",
    "lr_at_epoch",
    "no_grad",
    "save_checkpoint",
    "train",
]
