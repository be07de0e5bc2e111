"""Tensor math, autodiff, optimizers, and seeded RNG streams."""

from .rng import RngStream
from .tensor import (
    Tensor,
    add,
    concat,
    conv2d,
    conv_transpose2d,
    div,
    exp,
    gaussian,
    grad,
    leaky_relu,
    log,
    matmul,
    mean,
    mul,
    neg,
    no_grad,
    relu,
    reshape,
    set_debug_checks,
    sigmoid,
    silu,
    softplus,
    sub,
    sum_,
    tanh,
    transpose,
    upsample_nearest2d,
)
from .optim import AdamState, adam_state, adam_step
from .gradcheck import check_gradients

__all__ = [
    "AdamState",
    "RngStream",
    "Tensor",
    "adam_state",
    "adam_step",
    "add",
    "check_gradients",
    "concat",
    "conv2d",
    "conv_transpose2d",
    "div",
    "exp",
    "gaussian",
    "grad",
    "leaky_relu",
    "log",
    "matmul",
    "mean",
    "mul",
    "neg",
    "no_grad",
    "relu",
    "reshape",
    "set_debug_checks",
    "sigmoid",
    "silu",
    "softplus",
    "sub",
    "sum_",
    "tanh",
    "transpose",
    "upsample_nearest2d",
]
