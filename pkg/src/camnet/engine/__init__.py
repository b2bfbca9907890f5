"""Minimal reverse-mode autodiff engine."""

from camnet.engine.tensor import (
    Parameter,
    Tensor,
    as_tensor,
    backward,
    get_dtype,
    get_precision,
    precision,
    set_precision,
)
from camnet.engine.functional import (
    activate,
    affine,
    conv2d,
    cross_entropy,
    loss,
    max_pool2d,
    mse,
    no_grad,
    relu,
    softmax,
    tanh,
    upsample2d,
)
from camnet.engine.gradcheck import grad_check
from camnet.engine.rng import named_rng

__all__ = [
    "Parameter", "Tensor", "as_tensor", "backward", "get_dtype", "get_precision",
    "precision", "set_precision", "activate", "affine", "conv2d", "cross_entropy",
    "loss", "max_pool2d", "mse", "no_grad", "relu", "softmax", "tanh", "upsample2d",
    "grad_check", "named_rng",
]
