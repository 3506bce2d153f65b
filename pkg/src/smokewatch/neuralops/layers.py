"""Stateful layers built on the functional operators.

A layer owns its parameters (registered in a shared ParameterSet), caches the
forward context, and on backward() accumulates parameter gradients while
returning the input gradient. Composition and fusion wiring live in the
detector model; these stay deliberately small.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .params import ParameterSet


def he_init(rng: np.random.Generator, shape, fan_in: int, dtype=np.float32) -> np.ndarray:
    """Kaiming-normal weights for relu networks."""
    std = np.sqrt(2.0 / fan_in)
    return rng.normal(0.0, std, size=shape).astype(dtype)


class Conv2d:
    """k x k convolution with zero padding and optional bias."""

    def __init__(
        self,
        params: ParameterSet,
        name: str,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        stride: int = 1,
        padding: int | None = None,
        bias: bool = True,
        rng: np.random.Generator | None = None,
        zero_init: bool = False,
        bias_init: float = 0.0,
    ):
        self.stride = stride
        self.padding = kernel_size // 2 if padding is None else padding
        wshape = (out_channels, in_channels, kernel_size, kernel_size)
        if zero_init:
            w = np.zeros(wshape, dtype=np.float32)
        else:
            if rng is None:
                raise ValueError("rng required unless zero_init")
            w = he_init(rng, wshape, in_channels * kernel_size * kernel_size)
        self.w = params.add(f"{name}.w", w)
        self.b = None
        if bias:
            self.b = params.add(
                f"{name}.b", np.full(out_channels, bias_init, dtype=np.float32)
            )
        self._ctx = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        y, self._ctx = ops.conv2d_forward(
            x, self.w.value, None if self.b is None else self.b.value,
            stride=self.stride, padding=self.padding,
        )
        return y

    def backward(self, gy: np.ndarray) -> np.ndarray:
        gx, gw, gb = ops.conv2d_backward(self._ctx, gy)
        self.w.grad += gw
        if self.b is not None:
            self.b.grad += gb
        return gx


class DeformableConv2d:
    """Deformable convolution with a sibling zero-initialized offset predictor.

    The offset conv is a plain k x k convolution over the same input whose
    output supplies the per-tap (dx, dy) displacements; starting it at zero
    makes the layer behave as a standard convolution until training moves it.
    """

    def __init__(
        self,
        params: ParameterSet,
        name: str,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        rng: np.random.Generator,
    ):
        self.kernel_size = kernel_size
        self.offset_conv = Conv2d(
            params, f"{name}.offset", in_channels, 2 * kernel_size * kernel_size,
            kernel_size, zero_init=True,
        )
        wshape = (out_channels, in_channels, kernel_size, kernel_size)
        w = he_init(rng, wshape, in_channels * kernel_size * kernel_size)
        self.w = params.add(f"{name}.w", w)
        self.b = params.add(f"{name}.b", np.zeros(out_channels, dtype=np.float32))
        self._ctx = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        offsets = self.offset_conv.forward(x)
        y, self._ctx = ops.deformable_conv2d_forward(
            x, self.w.value, offsets, self.b.value
        )
        return y

    def backward(self, gy: np.ndarray) -> np.ndarray:
        gx, gw, gb, goffsets = ops.deformable_conv2d_backward(self._ctx, gy)
        self.w.grad += gw
        self.b.grad += gb
        gx_offsets = self.offset_conv.backward(goffsets)
        return gx + gx_offsets


class BilinearUpsample:
    def __init__(self, factor: int):
        self.factor = factor
        self._ctx = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        y, self._ctx = ops.bilinear_upsample_forward(x, self.factor)
        return y

    def backward(self, gy: np.ndarray) -> np.ndarray:
        return ops.bilinear_upsample_backward(self._ctx, gy)


class ReLU:
    def __init__(self):
        self._mask = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        y, self._mask = ops.relu_forward(x)
        return y

    def backward(self, gy: np.ndarray) -> np.ndarray:
        return ops.relu_backward(self._mask, gy)
