from .tensor import ShapeError, Tensor, is_grad_enabled, make_node, no_grad
from .ops import (
    LstmGateParams,
    add_n,
    conv1d,
    cross_entropy,
    dense,
    dropout,
    huber,
    lstm,
    maxpool1d,
    relu,
    reshape,
    scale,
    softmax,
)
from .optim import Adam, Sgd, glorot_uniform, make_optimizer, zeros_param

__all__ = [
    "Adam",
    "LstmGateParams",
    "Sgd",
    "ShapeError",
    "Tensor",
    "add_n",
    "conv1d",
    "cross_entropy",
    "dense",
    "dropout",
    "glorot_uniform",
    "huber",
    "is_grad_enabled",
    "lstm",
    "make_node",
    "make_optimizer",
    "maxpool1d",
    "no_grad",
    "relu",
    "reshape",
    "scale",
    "softmax",
    "zeros_param",
]
