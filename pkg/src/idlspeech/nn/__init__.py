from .autodiff import GraphConsumedError, Tensor, no_grad
from .depaudionet import (
    DepAudioNetParams,
    backbone,
    embed,
    forward_depaudionet,
    init_params,
    logits,
)
from .optim import lr_at_epoch, sgd_step

__all__ = [
    "DepAudioNetParams",
    "GraphConsumedError",
    "Tensor",
    "backbone",
    "embed",
    "forward_depaudionet",
    "init_params",
    "logits",
    "lr_at_epoch",
    "no_grad",
    "sgd_step",
]
