from .checkpoint import load_checkpoint, save_checkpoint
from .losses import (bce_grad, bce_logit_grad, bce_loss, focal_grad, focal_logit_grad,
                     focal_loss)
from .model import BINARY, MULTICLASS, NetConfig, Network, feature_shape, forward
from .optim import Adam, OptimConfig, adam_step, lr_schedule

__all__ = [
    "Adam", "BINARY", "MULTICLASS", "NetConfig", "Network", "OptimConfig", "adam_step",
    "bce_grad", "bce_logit_grad", "bce_loss", "feature_shape", "focal_grad",
    "focal_logit_grad", "focal_loss", "forward", "load_checkpoint", "lr_schedule",
    "save_checkpoint",
]
