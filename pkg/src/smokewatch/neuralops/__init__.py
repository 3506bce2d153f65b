"""Minimal differentiable operators: conv, deformable conv, upsampling, SGD."""

from .ops import (
    bilinear_upsample_backward,
    bilinear_upsample_forward,
    conv2d_backward,
    conv2d_forward,
    deformable_conv2d_backward,
    deformable_conv2d_forward,
    pointwise_backward,
    pointwise_forward,
    sigmoid,
)
from .layers import BilinearUpsample, Conv2d, DeformableConv2d, ReLU, he_init
from .params import DivergenceError, Parameter, ParameterSet, sgd_step

__all__ = [
    "BilinearUpsample",
    "Conv2d",
    "DeformableConv2d",
    "DivergenceError",
    "Parameter",
    "ParameterSet",
    "ReLU",
    "bilinear_upsample_backward",
    "bilinear_upsample_forward",
    "conv2d_backward",
    "conv2d_forward",
    "deformable_conv2d_backward",
    "deformable_conv2d_forward",
    "he_init",
    "pointwise_backward",
    "pointwise_forward",
    "sgd_step",
    "sigmoid",
]
