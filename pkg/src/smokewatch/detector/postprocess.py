"""Decoding head outputs into detections: thresholding plus greedy NMS."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..geometry import BoundingBox, GridLocation, decode_boxes_array, location_coords
from ..neuralops.ops import sigmoid
from .model import PredictionMaps, SmokeDetector


@dataclass(frozen=True)
class Detection:
    """One scored box; score is classification times centerness."""

    box: BoundingBox
    score: float
    location: GridLocation


def _pairwise_iou(box: BoundingBox, others: list[Detection]) -> np.ndarray:
    arr = np.array([d.box.as_tuple() for d in others], dtype=np.float64)
    ix0 = np.maximum(arr[:, 0], box.x0)
    iy0 = np.maximum(arr[:, 1], box.y0)
    ix1 = np.minimum(arr[:, 2], box.x1)
    iy1 = np.minimum(arr[:, 3], box.y1)
    inter = np.maximum(0.0, ix1 - ix0) * np.maximum(0.0, iy1 - iy0)
    areas = (arr[:, 2] - arr[:, 0]) * (arr[:, 3] - arr[:, 1])
    union = areas + box.area - inter
    return np.where(union > 0, inter / union, 0.0)


def nms(detections: list[Detection], iou_thresh: float) -> list[Detection]:
    """Greedy non-maximum suppression.

    Repeatedly keeps the highest-scoring remaining detection and drops
    everything overlapping it at IoU >= iou_thresh. Ties break by higher
    score, then smaller x0, then smaller y0, which makes the result
    independent of input order.
    """
    if not (0.0 < iou_thresh < 1.0):
        raise ValueError(f"iou_thresh must be in (0, 1), got {iou_thresh}")
    pending = sorted(detections, key=lambda d: (-d.score, d.box.x0, d.box.y0))
    kept: list[Detection] = []
    while pending:
        best = pending.pop(0)
        kept.append(best)
        if not pending:
            break
        ious = _pairwise_iou(best.box, pending)
        pending = [d for d, v in zip(pending, ious) if v < iou_thresh]
    return kept


def decode_detections(
    maps: PredictionMaps,
    image_size: tuple[int, int],
    score_thresh: float,
    nms_thresh: float,
) -> list[Detection]:
    """Threshold + decode + NMS for a single image's prediction maps."""
    if maps.cls_logits.shape[0] != 1:
        raise ValueError("decode_detections expects a single-image batch")
    h, w = maps.grid_shape
    xs, ys = location_coords(h, w, maps.stride)
    scores = (
        sigmoid(maps.cls_logits[0, 0].astype(np.float64))
        * sigmoid(maps.cen_logits[0, 0].astype(np.float64))
    ).ravel()
    keep = np.flatnonzero(scores >= score_thresh)
    if keep.size == 0:
        return []
    ltrb = maps.reg[0].reshape(4, -1).T[keep].astype(np.float64)
    boxes = decode_boxes_array(xs[keep], ys[keep], ltrb, image_size=image_size)
    dets = []
    for i, flat in enumerate(keep):
        x0, y0, x1, y1 = boxes[i]
        if x0 >= x1 or y0 >= y1:  # fully clamped outside the image
            continue
        loc = GridLocation(ix=int(flat % w), iy=int(flat // w), stride=maps.stride)
        dets.append(Detection(box=BoundingBox(x0, y0, x1, y1), score=float(scores[flat]), location=loc))
    return nms(dets, nms_thresh)


def detect(
    image: np.ndarray,
    model: SmokeDetector,
    score_thresh: float | None = None,
    nms_thresh: float | None = None,
) -> list[Detection]:
    """Run the model on one preprocessed (C, H, W) image and decode detections."""
    cfg = model.config
    score_thresh = cfg.score_thresh if score_thresh is None else score_thresh
    nms_thresh = cfg.nms_iou_thresh if nms_thresh is None else nms_thresh
    if not (0.0 < score_thresh < 1.0 and 0.0 < nms_thresh < 1.0):
        raise ValueError("thresholds must be in (0, 1)")
    if image.ndim == 3:
        image = image[None]
    maps = model.forward(image.astype(np.float32))
    h, w = cfg.input_size
    return decode_detections(maps, (w, h), score_thresh, nms_thresh)
