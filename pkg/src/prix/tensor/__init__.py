"""Minimal dense-tensor engine with reverse-mode autodiff."""
from . import functional
from .functional import (
    DomainError,
    adaptive_avg_pool,
    binary_focal_loss,
    conv2d,
    create,
    cross_entropy,
    dropout,
    focal_loss,
    gaussian,
    layer_norm,
    linear,
    log_softmax,
    l1_loss,
    ones,
    pool_resize,
    softmax,
    uniform,
    upsample,
    zeros,
)
from .nn import MLP, Conv2d, LayerNorm, Linear, Module, Parameter
from .optim import AdamW, OptimState, ParamGroup
from .tensor import (
    ContractError,
    ShapeError,
    Tensor,
    concat,
    exp,
    gelu,
    log,
    matmul,
    no_grad,
    relu,
    sigmoid,
    sqrt,
    stack,
    tanh,
    where,
)

__all__ = [
    "AdamW", "ContractError", "Conv2d", "DomainError", "LayerNorm", "Linear", "MLP", "Module",
    "OptimState", "ParamGroup", "Parameter", "ShapeError", "Tensor", "adaptive_avg_pool",
    "binary_focal_loss", "concat", "conv2d", "create", "cross_entropy", "dropout", "exp",
    "focal_loss", "functional", "gaussian", "gelu", "l1_loss", "layer_norm", "linear", "log",
    "log_softmax", "matmul", "no_grad", "ones", "pool_resize", "relu", "sigmoid", "softmax",
    "sqrt", "stack", "tanh", "uniform", "upsample", "where", "zeros",
]
