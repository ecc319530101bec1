"""Minimal dense-tensor engine with reverse-mode differentiation."""

from .tensor import GradTape, Node, Tensor, backward, grad_enabled, no_grad, branch, record_branches, replay_branches
from .ops import (
    add,
    as_tensor,
    batch_norm,
    clamp_min,
    concat,
    conv2d,
    div,
    elementwise,
    exp,
    getitem,
    l2_normalize,
    linear,
    log,
    log1p_sum_exp,
    log_softmax,
    matmul,
    mean,
    mul,
    neg,
    pool2d,
    power,
    relu,
    reshape,
    sqrt,
    sub,
    transpose,
)
from .ops import sum as tsum
from .gradcheck import grad_check, numerical_grad, relative_error, smooth_coords

__all__ = [
    "GradTape", "Node", "Tensor", "backward", "grad_enabled", "no_grad",
    "branch", "record_branches", "replay_branches",
    "add", "as_tensor", "batch_norm", "clamp_min", "concat", "conv2d", "div",
    "elementwise", "exp", "getitem", "l2_normalize", "linear", "log",
    "log1p_sum_exp", "log_softmax", "matmul", "mean", "mul", "neg", "pool2d",
    "power", "relu", "reshape", "sqrt", "sub", "transpose", "tsum",
    "grad_check", "numerical_grad", "relative_error", "smooth_coords",
]
