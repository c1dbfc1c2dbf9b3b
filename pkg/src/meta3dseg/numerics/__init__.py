"""Minimal dense tensors, reverse-mode autodiff and Adam."""
from . import ops
from .adam import AdamState, adam_step
from .ops import (activation, add, channel_max, channel_max_rows, concat, conv3d, exp, linear,
                  point_linear, mean, mean_rows, mul, point_features, relu, reshape, scale, segment, sigmoid,
                  square, sub)
from .tensor import (Graph, NumericsError, Tensor, backward, checked, get_dtype, is_checked,
                     is_deterministic, precision, set_checked, set_deterministic, set_precision,
                     tensor)

__all__ = [
    "AdamState", "Graph", "NumericsError", "Tensor", "activation", "adam_step",
    "add", "backward", "channel_max", "channel_max_rows", "checked", "concat", "conv3d", "exp",
    "get_dtype", "is_checked", "is_deterministic", "linear", "mean", "mean_rows", "mul", "ops",
    "point_features", "point_linear", "precision", "relu", "reshape", "scale", "segment", "set_checked",
    "set_deterministic", "set_precision", "sigmoid", "square", "sub", "tensor",
]
