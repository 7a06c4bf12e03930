from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import GradCheckReport, grad_check
from .layers import MLP, BatchNorm, ConvModule, Linear, Module
from .ops import (
    BatchNormState,
    add,
    batch_norm,
    concat,
    conv1d,
    cross_entropy,
    depthwise_conv1d,
    dropout,
    gather_rows,
    l1_loss,
    linear,
    relu,
    softmax,
    sparse_matmul,
)
from .optim import Adam, AdamState, adam_step
from .tensor import NumericalFault, Tape, Tensor

__all__ = [
    "Adam",
    "AdamState",
    "BatchNorm",
    "BatchNormState",
    "ConvModule",
    "GradCheckReport",
    "Linear",
    "MLP",
    "Module",
    "NumericalFault",
    "Tape",
    "Tensor",
    "adam_step",
    "add",
    "batch_norm",
    "concat",
    "conv1d",
    "cross_entropy",
    "depthwise_conv1d",
    "dropout",
    "gather_rows",
    "grad_check",
    "l1_loss",
    "linear",
    "load_checkpoint",
    "relu",
    "save_checkpoint",
    "softmax",
    "sparse_matmul",
]
