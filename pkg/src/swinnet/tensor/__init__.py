"""Minimal dense tensor engine with reverse-mode autodiff."""

from .core import (
    GradTape,
    InvalidArgument,
    NumericDomainError,
    Tensor,
    active_tape,
    backward,
)
from .gradcheck import grad_check, relative_error
from .ops import (
    add,
    add_bias,
    batch_norm,
    batch_norm_infer,
    bce_with_logits,
    bilinear_upsample,
    channel_max_pool,
    concat,
    conv2d,
    elementwise,
    gelu,
    getitem,
    mul_const,
    global_max_pool_spatial,
    layer_norm,
    linear,
    matmul,
    mean_all,
    mul,
    relu,
    reshape,
    resize_matrix,
    roll,
    scale,
    sigmoid,
    softmax,
    sub,
    sum_all,
    take,
    transpose,
)

__all__ = [name for name in dir() if not name.startswith("_")]
