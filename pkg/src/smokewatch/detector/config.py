"""Detector configuration."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field


@dataclass
class DetectorConfig:
    """Architecture, training, and inference settings.

    The fused prediction grid lives at the finest backbone stride, so
    stage_strides must start with the smallest value and input_size must be
    divisible by every stride.
    """

    input_size: tuple[int, int] = (256, 256)  # (H, W)
    in_channels: int = 3
    stage_channels: tuple[int, ...] = (16, 32, 48)
    stage_strides: tuple[int, ...] = (4, 8, 16)
    head_channels: int = 32
    deform_kernel_size: int = 3
    residual: bool = False
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0
    lr: float = 0.02
    momentum: float = 0.9
    warmup_steps: int = 300
    batch_size: int = 4
    train_steps: int = 1500
    score_thresh: float = 0.5
    nms_iou_thresh: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if len(self.stage_channels) != len(self.stage_strides):
            raise ValueError("stage_channels and stage_strides must align")
        if self.fused_stride != min(self.stage_strides):
            raise ValueError("stage_strides must be increasing from the finest level")
        prev = 0
        for s in self.stage_strides:
            if s <= prev:
                raise ValueError(f"stage_strides must be strictly increasing, got {self.stage_strides}")
            prev = s
        h, w = self.input_size
        for s in self.stage_strides:
            if h % s or w % s:
                raise ValueError(f"input size {self.input_size} not divisible by stride {s}")
        for name in ("score_thresh", "nms_iou_thresh", "focal_alpha"):
            v = getattr(self, name)
            if not (0.0 < v < 1.0):
                raise ValueError(f"{name} must be in (0, 1), got {v}")
        if self.deform_kernel_size % 2 == 0:
            raise ValueError("deform_kernel_size must be odd")

    @property
    def fused_stride(self) -> int:
        return self.stage_strides[0]

    @property
    def fused_shape(self) -> tuple[int, int]:
        return (self.input_size[0] // self.fused_stride,
                self.input_size[1] // self.fused_stride)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DetectorConfig":
        d = dict(d)
        for key in ("input_size", "stage_channels", "stage_strides"):
            if key in d and isinstance(d[key], list):
                d[key] = tuple(d[key])
        return cls(**d)
