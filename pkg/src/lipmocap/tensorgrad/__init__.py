"""Minimal reverse-mode autodiff engine, layers and optimizer for the LIP networks."""
from .core import (ShapeError, Tape, Tensor, add, as_tensor, backward, concat, cross, default_dtype,
                   div, getitem, linear_relu_maxpool, matmul, max_over_axis, mean, mse, mul,
                   parameter, precision, relu, reshape, sigmoid, slice_, sqrt, square, stack, sub,
                   sum_squared_error, take, tanh, transpose, tsum)
from .layers import (MLP, BiGRU, GRU, GRUCell, Linear, Module, PointNetEncoder, bigru_forward,
                     gru_cell, pointnet_encode)
from .optim import AdamW, adamw_step

__all__ = [
    "AdamW", "BiGRU", "GRU", "GRUCell", "Linear", "MLP", "Module", "PointNetEncoder", "ShapeError",
    "Tape", "Tensor", "adamw_step", "add", "as_tensor", "backward", "bigru_forward", "concat",
    "cross", "default_dtype", "div", "getitem", "gru_cell", "linear_relu_maxpool", "matmul",
    "max_over_axis", "mean", "mse", "mul", "parameter", "pointnet_encode", "precision", "relu",
    "reshape", "sigmoid", "slice_", "sqrt", "square", "stack", "sub", "sum_squared_error", "take",
    "tanh", "transpose", "tsum",
]
