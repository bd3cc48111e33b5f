"""Citywide traffic flow prediction on grid-mapped road networks.

Three residual convolutional branches (closeness, period, trend) are fused
by learnable per-cell weight maps and finished by an autoregressive head.
Includes a shared-weight LSTM baseline, a synthetic city generator, a
deterministic trainer, an evaluation harness, and a CLI.
"""

from .gradcheck import grad_check
from .tensor import (ComputeGraph, NonFiniteError, ShapeError, Tensor, add,
                     add_bias, conv2d, matmul, mse_loss, mul, mul_map,
                     no_grad, relu, reshape, scale, sigmoid, tanh)

__version__ = "0.1.0"

__all__ = [
    "ComputeGraph", "NonFiniteError", "ShapeError", "Tensor",
    "add", "add_bias", "conv2d", "grad_check", "matmul", "mse_loss",
    "mul", "mul_map", "no_grad", "relu", "reshape", "scale", "sigmoid",
    "tanh", "__version__",
]
