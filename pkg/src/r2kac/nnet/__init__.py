"""Toy-scale differentiable SR-R2KAC network in numpy."""

from .conv import conv2d_dilated_bwd, conv2d_dilated_fwd
from .loss import LossWeights, loss_total
from .model import (
    NetConfig,
    R2KACBlock,
    SharedAtrousConv,
    SRR2KACNet,
    forward_multiscale,
    r2kac_block_fwd,
    srm_step,
)
from .optim import AdamState, adam_step
from .tensor import Tensor
from .train import (
    feature_map_summary,
    load_checkpoint,
    save_checkpoint,
    synthetic_pairs,
    train_toy,
)

__all__ = [
    "AdamState",
    "LossWeights",
    "NetConfig",
    "R2KACBlock",
    "SRR2KACNet",
    "SharedAtrousConv",
    "Tensor",
    "adam_step",
    "conv2d_dilated_bwd",
    "conv2d_dilated_fwd",
    "feature_map_summary",
    "forward_multiscale",
    "load_checkpoint",
    "loss_total",
    "r2kac_block_fwd",
    "save_checkpoint",
    "srm_step",
    "synthetic_pairs",
    "train_toy",
]
