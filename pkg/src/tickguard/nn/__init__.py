from .loss import bce_with_logits, sigmoid
from .model import (
    ModelConfig,
    ModelParams,
    backward,
    forward,
    glorot_bound,
    init_params,
    positional_encoding,
)
from .optim import AdamW, StepLR, scheduler_lr

__all__ = [
    "AdamW",
    "ModelConfig",
    "ModelParams",
    "StepLR",
    "backward",
    "bce_with_logits",
    "forward",
    "glorot_bound",
    "init_params",
    "positional_encoding",
    "scheduler_lr",
    "sigmoid",
]
