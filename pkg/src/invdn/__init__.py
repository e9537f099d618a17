"""Invertible denoising network (InvDN) on a small numpy autodiff engine."""

from .inference import DenoiseOptions, NoiseGenOptions, denoise, generate_noisy
from .model import InvDNModel, LatentSplit, ModelConfig, parameter_count
from .tensor import Tensor, no_grad
from .training import AdamState, TrainConfig, train

__all__ = [
    "AdamState",
    "DenoiseOptions",
    "InvDNModel",
    "LatentSplit",
    "ModelConfig",
    "NoiseGenOptions",
    "Tensor",
    "TrainConfig",
    "denoise",
    "generate_noisy",
    "no_grad",
    "parameter_count",
    "train",
]
