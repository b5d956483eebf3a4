"""Reverse-mode differentiation substrate: tensors, layer primitives, grad checks."""
from . import kernels, ops
from .conv import conv2d, conv3d, deconv3d
from .gradcheck import GradCheckReport, grad_check
from .ops import dense, elu, sigmoid
from .recurrent import GRU_KEYS, gru_cell
from .tensor import (
    GraphError,
    NonFiniteError,
    NumericsError,
    ParamGroup,
    ShapeError,
    Tensor,
    as_tensor,
    backward,
    debug_enabled,
    no_grad,
    set_debug,
)

__all__ = [
    "GRU_KEYS", "GradCheckReport", "GraphError", "NonFiniteError", "NumericsError",
    "ParamGroup", "ShapeError", "Tensor", "as_tensor", "backward", "conv2d", "conv3d",
    "debug_enabled", "deconv3d", "dense", "elu", "grad_check", "gru_cell", "kernels",
    "no_grad", "ops", "set_debug", "sigmoid",
]
