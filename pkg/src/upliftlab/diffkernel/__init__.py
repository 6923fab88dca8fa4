"""Minimal dense-tensor engine: reverse-mode autodiff, Adam, gradient checks."""

from .gradcheck import grad_check
from .layers import MLP, Linear, Module, uniform_param
from .optim import Adam, AdamState, adam_step
from .rng import substream
from .tensor import (
    Tape,
    Tensor,
    add,
    as_tensor,
    backward,
    concat,
    current_tape,
    div,
    exp,
    frob_norm_sq,
    fresh_tape,
    getitem,
    log,
    matmul,
    maximum,
    mean,
    minimum,
    mse,
    mul,
    neg,
    no_grad,
    power,
    relu,
    reshape,
    scale_shift,
    set_check_finite,
    sigmoid,
    softmax,
    softplus,
    sqrt,
    sub,
    swapaxes,
    tabs,
    take,
    tanh,
    tsum,
)

__all__ = [name for name in dir() if not name.startswith("_")]
