"""Minimal dense tensor engine with reverse-mode differentiation."""

from . import backend, ops
from .module import (
    BatchNorm,
    Conv2d,
    DepthwiseConv2d,
    Linear,
    Module,
    ModuleList,
    kaiming_normal,
)
from .tensor import EngineError, Parameter, ShapeError, Tensor, no_grad

__all__ = [
    "backend",
    "ops",
    "Tensor",
    "Parameter",
    "EngineError",
    "ShapeError",
    "no_grad",
    "Module",
    "ModuleList",
    "Conv2d",
    "DepthwiseConv2d",
    "Linear",
    "BatchNorm",
    "kaiming_normal",
]
