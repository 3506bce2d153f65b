"""The detector network: backbone stages, per-level deformable convs, fusion, head.

Each backbone stage halves or quarters resolution with two conv-relu blocks.
Every stage output passes a deformable convolution to the shared head width,
coarser levels are bilinearly upsampled to the finest stride, all levels are
summed into one fused map, and a 1x1 stack predicts class logit, four side
distances, and a centerness logit per fused-grid cell. Side distances go
through exp(.)*stride so decoded boxes are always valid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..neuralops.layers import BilinearUpsample, Conv2d, DeformableConv2d, ReLU
from ..neuralops.params import ParameterSet
from .config import DetectorConfig

# bias prior so the untrained classifier starts near p=0.01 everywhere
_CLS_BIAS_PRIOR = -4.595


@dataclass(frozen=True)
class PredictionMaps:
    """Per-location head outputs on the fused grid.

    cls_logits (B, 1, H, W), reg (B, 4, H, W) strictly positive activated
    side distances, cen_logits (B, 1, H, W).
    """

    cls_logits: np.ndarray
    reg: np.ndarray
    cen_logits: np.ndarray
    stride: int

    def __post_init__(self):
        if self.cls_logits.shape[2:] != self.reg.shape[2:] or self.reg.shape[2:] != self.cen_logits.shape[2:]:
            raise ValueError("prediction maps must share spatial shape")
        if self.reg.shape[1] != 4:
            raise ValueError(f"regression map must have 4 channels, got {self.reg.shape}")

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.reg.shape[2], self.reg.shape[3]


class _Stage:
    """Two conv-relu blocks reducing resolution by the stage's stride ratio."""

    def __init__(self, params, name, in_c, out_c, ratio, residual, rng):
        if ratio not in (1, 2, 4):
            raise ValueError(f"stage stride ratio must be 1, 2, or 4, got {ratio}")
        s1 = 2 if ratio >= 2 else 1
        s2 = 2 if ratio == 4 else 1
        self.conv1 = Conv2d(params, f"{name}.conv1", in_c, out_c, 3, stride=s1, rng=rng)
        self.relu1 = ReLU()
        self.conv2 = Conv2d(params, f"{name}.conv2", out_c, out_c, 3, stride=s2, rng=rng)
        self.relu2 = ReLU()
        # identity skip is only well-defined when conv2 keeps the shape
        self.residual = residual and s2 == 1

    def forward(self, x):
        h = self.relu1.forward(self.conv1.forward(x))
        y = self.conv2.forward(h)
        if self.residual:
            y = y + h
        return self.relu2.forward(y)

    def backward(self, gy):
        g = self.relu2.backward(gy)
        gh = self.conv2.backward(g)
        if self.residual:
            gh = gh + g
        return self.conv1.backward(self.relu1.backward(gh))


class SmokeDetector:
    """Assembles the full differentiable pipeline and owns its parameters."""

    def __init__(self, config: DetectorConfig, rng: np.random.Generator | None = None):
        self.config = config
        self.params = ParameterSet()
        rng = rng if rng is not None else np.random.default_rng(config.seed)

        self.stages: list[_Stage] = []
        in_c = config.in_channels
        prev_stride = 1
        for i, (c, s) in enumerate(zip(config.stage_channels, config.stage_strides)):
            ratio = s // prev_stride
            self.stages.append(
                _Stage(self.params, f"stage{i}", in_c, c, ratio, config.residual, rng)
            )
            in_c = c
            prev_stride = s

        hc = config.head_channels
        self.laterals = [
            DeformableConv2d(self.params, f"lateral{i}", c, hc, config.deform_kernel_size, rng)
            for i, c in enumerate(config.stage_channels)
        ]
        self.upsamples = [
            BilinearUpsample(s // config.fused_stride) for s in config.stage_strides
        ]

        self.fuse_relu = ReLU()
        self.head_conv = Conv2d(self.params, "head.shared", hc, hc, 1, rng=rng)
        self.head_relu = ReLU()
        self.cls_head = Conv2d(self.params, "head.cls", hc, 1, 1, rng=rng,
                               bias_init=_CLS_BIAS_PRIOR)
        self.reg_head = Conv2d(self.params, "head.reg", hc, 4, 1, rng=rng)
        self.cen_head = Conv2d(self.params, "head.cen", hc, 1, 1, rng=rng)
        self._reg_act = None  # cached activated regression for backward

    @property
    def stride(self) -> int:
        return self.config.fused_stride

    def forward(self, images: np.ndarray) -> PredictionMaps:
        """Run the pipeline on a (B, C, H, W) batch."""
        H, W = self.config.input_size
        if images.ndim != 4 or images.shape[1] != self.config.in_channels or images.shape[2:] != (H, W):
            raise ValueError(
                f"expected input (B, {self.config.in_channels}, {H}, {W}), got {images.shape}"
            )
        x = images
        fused = None
        for stage, lateral, up in zip(self.stages, self.laterals, self.upsamples):
            x = stage.forward(x)
            level = up.forward(lateral.forward(x))
            fused = level if fused is None else fused + level

        h = self.head_relu.forward(self.head_conv.forward(self.fuse_relu.forward(fused)))
        cls_logits = self.cls_head.forward(h)
        reg_logits = self.reg_head.forward(h)
        cen_logits = self.cen_head.forward(h)
        reg = np.exp(reg_logits) * self.stride
        self._reg_act = reg
        return PredictionMaps(cls_logits=cls_logits, reg=reg, cen_logits=cen_logits,
                              stride=self.stride)

    def backward(self, dcls: np.ndarray, dreg: np.ndarray, dcen: np.ndarray) -> None:
        """Accumulate parameter gradients from loss gradients on the head maps.

        dreg is the gradient w.r.t. the activated side distances; the
        exp(.)*stride chain rule is applied here.
        """
        dreg_logits = dreg * self._reg_act
        gh = (
            self.cls_head.backward(dcls)
            + self.reg_head.backward(dreg_logits)
            + self.cen_head.backward(dcen)
        )
        gfused = self.fuse_relu.backward(
            self.head_conv.backward(self.head_relu.backward(gh))
        )
        gx = None
        for stage, lateral, up in zip(
            reversed(self.stages), reversed(self.laterals), reversed(self.upsamples)
        ):
            glevel = lateral.backward(up.backward(gfused))
            if gx is not None:
                glevel = glevel + gx
            gx = stage.backward(glevel)
