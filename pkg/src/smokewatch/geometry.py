"""Boxes, grid locations, IoU, and regression-target geometry.

Shared vocabulary for the detector stack: axis-aligned boxes in continuous
image coordinates, feature-map cell centers, the 4D left/top/right/bottom
distance encoding that links locations to boxes, and centerness targets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box with corners (x0, y0) and (x1, y1) in pixels.

    Boxes are half-open continuous rectangles; containment tests are strict
    so that a point on the boundary never produces a zero regression distance.
    """

    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        coords = (self.x0, self.y0, self.x1, self.y1)
        if not all(math.isfinite(c) for c in coords):
            raise ValueError(f"box coordinates must be finite, got {coords}")
        if self.x0 < 0 or self.y0 < 0:
            raise ValueError(f"box coordinates must be >= 0, got {coords}")
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise ValueError(f"box must have positive width and height, got {coords}")

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0

    def contains(self, x: float, y: float) -> bool:
        """True when (x, y) lies strictly inside the box."""
        return self.x0 < x < self.x1 and self.y0 < y < self.y1

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x0, self.y0, self.x1, self.y1)


@dataclass(frozen=True)
class GridLocation:
    """A feature-map cell identified by its indices and stride.

    The image-space coordinates are the cell center: x = stride/2 + ix*stride
    and likewise for y.
    """

    ix: int
    iy: int
    stride: int

    def __post_init__(self):
        if self.ix < 0 or self.iy < 0:
            raise ValueError(f"grid indices must be >= 0, got ({self.ix}, {self.iy})")
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")

    @property
    def x(self) -> float:
        return self.stride / 2.0 + self.ix * self.stride

    @property
    def y(self) -> float:
        return self.stride / 2.0 + self.iy * self.stride


@dataclass(frozen=True)
class RegressionVector:
    """Distances (l, t, r, b) from a location to the four box sides, in pixels."""

    l: float
    t: float
    r: float
    b: float

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.l, self.t, self.r, self.b)


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union of two boxes; 0 when disjoint, 1 when identical."""
    ix0 = max(a.x0, b.x0)
    iy0 = max(a.y0, b.y0)
    ix1 = min(a.x1, b.x1)
    iy1 = min(a.y1, b.y1)
    iw = max(0.0, ix1 - ix0)
    ih = max(0.0, iy1 - iy0)
    inter = iw * ih
    union = a.area + b.area - inter
    return inter / union if union > 0 else 0.0


def regression_targets(loc: GridLocation, gt: BoundingBox) -> RegressionVector:
    """Encode a ground-truth box as side distances from a location.

    The location must lie strictly inside the box; anything else indicates an
    assignment bug upstream and raises.
    """
    if not gt.contains(loc.x, loc.y):
        raise ValueError(
            f"location ({loc.x}, {loc.y}) is not strictly inside box {gt.as_tuple()}"
        )
    return RegressionVector(
        l=loc.x - gt.x0,
        t=loc.y - gt.y0,
        r=gt.x1 - loc.x,
        b=gt.y1 - loc.y,
    )


def decode_box(
    loc: GridLocation,
    v: RegressionVector,
    image_size: tuple[int, int] | None = None,
) -> BoundingBox:
    """Decode side distances back into a box, optionally clamped to the image.

    Args:
        loc: anchor location supplying the (x, y) reference point.
        v: strictly positive side distances.
        image_size: optional (width, height); when given the box is clamped
            to [0, width] x [0, height].
    """
    if min(v.l, v.t, v.r, v.b) <= 0:
        raise ValueError(f"regression components must be > 0 to decode, got {v.as_tuple()}")
    x0 = loc.x - v.l
    y0 = loc.y - v.t
    x1 = loc.x + v.r
    y1 = loc.y + v.b
    if image_size is not None:
        w, h = image_size
        x0 = min(max(x0, 0.0), w)
        y0 = min(max(y0, 0.0), h)
        x1 = min(max(x1, 0.0), w)
        y1 = min(max(y1, 0.0), h)
    return BoundingBox(x0, y0, x1, y1)


def centerness_target(v: RegressionVector) -> float:
    """How central a location is within its box, in [0, 1].

    sqrt((min(l,r)/max(l,r)) * (min(t,b)/max(t,b))); 1 at the exact center,
    0 on any box edge.
    """
    if min(v.l, v.t, v.r, v.b) < 0:
        raise ValueError(f"regression components must be >= 0, got {v.as_tuple()}")
    mx_lr = max(v.l, v.r)
    mx_tb = max(v.t, v.b)
    if mx_lr <= 0 or mx_tb <= 0:
        raise ValueError(f"degenerate regression vector {v.as_tuple()}")
    return math.sqrt((min(v.l, v.r) / mx_lr) * (min(v.t, v.b) / mx_tb))


def locations_for_map(h: int, w: int, stride: int) -> list[GridLocation]:
    """All cell centers of an h x w feature map, row-major."""
    if h < 1 or w < 1:
        raise ValueError(f"feature map must be at least 1x1, got {h}x{w}")
    return [GridLocation(ix=ix, iy=iy, stride=stride) for iy in range(h) for ix in range(w)]


def location_coords(h: int, w: int, stride: int) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized cell-center coordinates for an h x w map.

    Returns (xs, ys), each flat float64 arrays of length h*w in row-major
    order, matching locations_for_map.
    """
    xs = stride / 2.0 + np.arange(w, dtype=np.float64) * stride
    ys = stride / 2.0 + np.arange(h, dtype=np.float64) * stride
    gx, gy = np.meshgrid(xs, ys)
    return gx.ravel(), gy.ravel()


def decode_boxes_array(
    xs: np.ndarray,
    ys: np.ndarray,
    ltrb: np.ndarray,
    image_size: tuple[int, int] | None = None,
) -> np.ndarray:
    """Vectorized decode: (N,) coords + (N, 4) distances -> (N, 4) xyxy boxes."""
    x0 = xs - ltrb[:, 0]
    y0 = ys - ltrb[:, 1]
    x1 = xs + ltrb[:, 2]
    y1 = ys + ltrb[:, 3]
    boxes = np.stack([x0, y0, x1, y1], axis=1)
    if image_size is not None:
        w, h = image_size
        boxes[:, 0] = np.clip(boxes[:, 0], 0.0, w)
        boxes[:, 1] = np.clip(boxes[:, 1], 0.0, h)
        boxes[:, 2] = np.clip(boxes[:, 2], 0.0, w)
        boxes[:, 3] = np.clip(boxes[:, 3], 0.0, h)
    return boxes


def iou_array(boxes: np.ndarray, ref: BoundingBox) -> np.ndarray:
    """IoU of each (N, 4) xyxy box against one reference box."""
    ix0 = np.maximum(boxes[:, 0], ref.x0)
    iy0 = np.maximum(boxes[:, 1], ref.y0)
    ix1 = np.minimum(boxes[:, 2], ref.x1)
    iy1 = np.minimum(boxes[:, 3], ref.y1)
    inter = np.maximum(0.0, ix1 - ix0) * np.maximum(0.0, iy1 - iy0)
    areas = (boxes[:, 2] - boxes[:, 0]) * (boxes[:, 3] - boxes[:, 1])
    union = areas + ref.area - inter
    out = np.zeros(len(boxes), dtype=np.float64)
    np.divide(inter, union, out=out, where=union > 0)
    return out
