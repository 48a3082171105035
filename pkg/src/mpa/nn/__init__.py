from .autograd import (
    Tensor,
    add,
    as_tensor,
    conv1d,
    cross_entropy,
    default_dtype,
    dropout,
    embedding,
    gelu,
    getitem,
    grad_enabled,
    layer_norm,
    linear,
    log_softmax,
    matmul,
    mean,
    mse_loss,
    mul,
    no_grad,
    parameter,
    precision,
    reshape,
    softmax,
    sub,
    transpose,
    tsum,
)
from .optim import OptimizerState, adam_step, clip_grad_norm, global_norm, inverse_sqrt_lr
