"""Deterministic reverse-mode autodiff engine: tensors, ops, optimizers, IO."""

from .autodiff import (
    DTYPE,
    Tensor,
    add,
    add_scalar,
    bce_with_logits,
    concat,
    conv2d,
    dense,
    exp,
    global_avg_pool,
    log,
    logsumexp_rows,
    matmul,
    mul,
    mul_channelwise,
    narrow,
    no_grad,
    normalize_rows,
    relu,
    reshape,
    scale,
    sigmoid,
    silu,
    softmax_cross_entropy,
    sqrt,
    sub,
    tanh,
    tmean,
    transpose,
    tsum,
)
from .checkpoint import dump_ntb1, load_ntb1, parse_ntb1, save_ntb1
from .gradcheck import grad_check
from .layers import Conv2dLayer, DenseLayer, kaiming_uniform, load_state, state_dict
from .optim import SGD, Adam, Parameter, make_optimizer, parameter, zero_grad

__all__ = [
    "DTYPE", "Tensor", "add", "add_scalar", "bce_with_logits", "concat",
    "conv2d", "dense", "exp", "global_avg_pool", "log", "logsumexp_rows",
    "matmul", "mul", "mul_channelwise", "narrow", "no_grad", "normalize_rows",
    "relu", "reshape", "scale", "sigmoid", "silu", "softmax_cross_entropy",
    "sqrt", "sub", "tanh", "tmean", "transpose", "tsum",
    "dump_ntb1", "load_ntb1", "parse_ntb1", "save_ntb1",
    "grad_check",
    "Conv2dLayer", "DenseLayer", "kaiming_uniform", "load_state", "state_dict",
    "SGD", "Adam", "Parameter", "make_optimizer", "parameter", "zero_grad",
]
