from .tensor import (
    ShapeError, Tape, Tensor, add, as_tensor, backpropagate, clip, concat,
    div, exp, gather_rows, im2col3x3, log, matmul, mul, neg, pad2d,
    reduce_mean,
    reduce_sum, relu, reshape, segment_sum, sigmoid, slice_cols, softplus,
    sqrt, square, sub, tanh,
)
from .params import Adam, OptimError, ParameterSet, adam_step, fan_in_uniform
from .checkpoint import load_checkpoint, save_checkpoint

__all__ = [
    "Adam", "OptimError", "ParameterSet", "ShapeError", "Tape", "Tensor",
    "adam_step", "add", "as_tensor", "backpropagate", "clip", "concat",
    "div", "exp", "fan_in_uniform", "gather_rows", "im2col3x3",
    "load_checkpoint", "log",
    "matmul", "mul", "neg", "pad2d", "reduce_mean", "reduce_sum", "relu",
    "reshape", "save_checkpoint", "segment_sum", "sigmoid", "slice_cols",
    "softplus", "sqrt", "square", "sub", "tanh",
]
