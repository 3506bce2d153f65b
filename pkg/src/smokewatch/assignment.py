"""Adaptive selection of positive training locations from live predictions.

Every grid cell strictly inside a ground-truth box is a candidate. Each
candidate is scored by IoU(predicted box, gt) times predicted confidence, the
threshold is mean + population standard deviation of the candidate scores,
and candidates at or above it become positives. Candidates left over are
ignored by the loss rather than treated as negatives. A point-adapted
rendition of the original center-distance ATSS is kept for comparison, and a
center-sampling rule covers the warm-up steps before predictions mean
anything.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    BoundingBox,
    GridLocation,
    decode_boxes_array,
    iou_array,
    location_coords,
)

# role codes used by the array-level API
NEG, POS, IGN = 0, 1, 2


class NoCandidatesError(ValueError):
    """A ground-truth box contains no grid cell center."""


@dataclass(frozen=True)
class CandidateSample:
    """One inside-box location with its live prediction quality."""

    location: GridLocation
    confidence: float
    box: BoundingBox
    iou_with_gt: float
    score: float = field(init=False)

    def __post_init__(self):
        if not (0.0 <= self.confidence <= 1.0 and 0.0 <= self.iou_with_gt <= 1.0):
            raise ValueError("confidence and iou must be in [0, 1]")
        object.__setattr__(self, "score", self.iou_with_gt * self.confidence)


@dataclass(frozen=True)
class AssignmentResult:
    """Partition of locations into positives / ignored / negatives.

    threshold is set by the single-box selectors; the multi-box assign fills
    thresholds (one entry per ground-truth box, None where the box had no
    candidates) and box_index (resolved ground-truth index per positive).
    """

    positives: frozenset[GridLocation]
    ignored: frozenset[GridLocation]
    negatives: frozenset[GridLocation]
    threshold: float | None = None
    box_index: dict[GridLocation, int] = field(default_factory=dict)
    thresholds: tuple[float | None, ...] = ()


def sample_score(iou: float, confidence: float) -> float:
    """Candidate quality: IoU with the ground truth times predicted confidence."""
    if not (0.0 <= iou <= 1.0 and 0.0 <= confidence <= 1.0):
        raise ValueError(f"iou and confidence must be in [0, 1], got {iou}, {confidence}")
    return iou * confidence


def candidate_points(gt: BoundingBox, locations: list[GridLocation]) -> list[GridLocation]:
    """Locations strictly inside the box, input order preserved."""
    return [loc for loc in locations if gt.contains(loc.x, loc.y)]


def _center_distance(loc: GridLocation, gt: BoundingBox) -> float:
    cx, cy = gt.center
    return math.hypot(loc.x - cx, loc.y - cy)


def _forced_max(candidates: list[CandidateSample], gt: BoundingBox) -> int:
    """Index of the max-score candidate; ties go to the one nearest the box
    center, then lowest (iy, ix)."""
    best = max(
        range(len(candidates)),
        key=lambda i: (
            candidates[i].score,
            -_center_distance(candidates[i].location, gt),
            -candidates[i].location.iy,
            -candidates[i].location.ix,
        ),
    )
    return best


def modified_atss(candidates: list[CandidateSample], gt: BoundingBox) -> AssignmentResult:
    """Score-thresholded positive selection for one ground-truth box.

    Threshold = mean + population std of all candidate scores; candidates at
    or above it are positive. An empty selection promotes the single
    max-score candidate so every box trains at least one location. Everything
    else inside the box is ignored.
    """
    if not candidates:
        raise NoCandidatesError("no candidate locations inside the box")
    scores = np.array([c.score for c in candidates], dtype=np.float64)
    threshold = float(scores.mean() + scores.std())
    selected = scores >= threshold
    if not selected.any():
        selected[_forced_max(candidates, gt)] = True
    positives = frozenset(c.location for c, s in zip(candidates, selected) if s)
    ignored = frozenset(c.location for c, s in zip(candidates, selected) if not s)
    return AssignmentResult(
        positives=positives,
        ignored=ignored,
        negatives=frozenset(),
        threshold=threshold,
        box_index={loc: 0 for loc in positives},
    )


def original_atss_baseline(
    candidates: list[CandidateSample], gt: BoundingBox, k: int = 9
) -> AssignmentResult:
    """Point-adapted original ATSS for comparison.

    Takes the k candidates nearest the box center, thresholds their predicted
    IoUs at mean + population std, and keeps those at or above it. Candidates
    outside the top-k or below the threshold are ignored.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if not candidates:
        raise NoCandidatesError("no candidate locations inside the box")
    order = sorted(
        range(len(candidates)),
        key=lambda i: (
            _center_distance(candidates[i].location, gt),
            candidates[i].location.iy,
            candidates[i].location.ix,
        ),
    )
    top = order[: min(k, len(candidates))]
    ious = np.array([candidates[i].iou_with_gt for i in top], dtype=np.float64)
    threshold = float(ious.mean() + ious.std())
    chosen = {
        candidates[i].location
        for i, v in zip(top, ious)
        if v >= threshold and gt.contains(candidates[i].location.x, candidates[i].location.y)
    }
    ignored = frozenset(c.location for c in candidates if c.location not in chosen)
    return AssignmentResult(
        positives=frozenset(chosen),
        ignored=ignored,
        negatives=frozenset(),
        threshold=threshold,
        box_index={loc: 0 for loc in chosen},
    )


def assign_arrays(
    h: int,
    w: int,
    stride: int,
    gt_boxes: list[BoundingBox],
    confidences: np.ndarray,
    pred_boxes: np.ndarray,
    warmup: bool = False,
    center_radius: float = 1.5,
):
    """Array-level multi-box assignment over a full h x w grid.

    Args:
        confidences: (h*w,) post-sigmoid classification scores, row-major.
        pred_boxes: (h*w, 4) decoded xyxy boxes per location.
        warmup: use center sampling (within center_radius*stride of each box
            center) instead of prediction-driven selection.
    Returns:
        (roles, gt_idx, thresholds): roles is (h*w,) int8 of NEG/POS/IGN,
        gt_idx is (h*w,) int32 with the resolved box index at positives (-1
        elsewhere), thresholds has one float-or-None entry per box.
    """
    n = h * w
    xs, ys = location_coords(h, w, stride)
    roles = np.zeros(n, dtype=np.int8)
    gt_idx = np.full(n, -1, dtype=np.int32)
    best_area = np.full(n, np.inf)
    thresholds: list[float | None] = []

    for bi, gt in enumerate(gt_boxes):
        inside = (xs > gt.x0) & (xs < gt.x1) & (ys > gt.y0) & (ys < gt.y1)
        idx = np.flatnonzero(inside)
        if idx.size == 0:
            thresholds.append(None)
            continue
        if warmup:
            cx, cy = gt.center
            dist = np.hypot(xs[idx] - cx, ys[idx] - cy)
            sel = dist <= center_radius * stride
            if not sel.any():
                sel[np.argmin(dist)] = True
            thresholds.append(None)
        else:
            ious = iou_array(pred_boxes[idx], gt)
            scores = ious * confidences[idx]
            thr = float(scores.mean() + scores.std())
            sel = scores >= thr
            if not sel.any():
                cx, cy = gt.center
                dist = np.hypot(xs[idx] - cx, ys[idx] - cy)
                # max score, ties by distance to center then row-major index
                best = np.lexsort((idx, dist, -scores))[0]
                sel[best] = True
            thresholds.append(thr)

        pos_here = idx[sel]
        ign_here = idx[~sel]
        # ignored never demotes an existing positive
        roles[ign_here] = np.where(roles[ign_here] == POS, POS, IGN)
        # positives resolve multi-box conflicts to the smallest box
        claim = gt.area < best_area[pos_here]
        winners = pos_here[claim]
        roles[winners] = POS
        gt_idx[winners] = bi
        best_area[winners] = gt.area
        # positives that lost the area contest stay positive for their box
        roles[pos_here[~claim]] = POS

    return roles, gt_idx, thresholds


def assign(
    locations: list[GridLocation],
    gt_boxes: list[BoundingBox],
    confidences: np.ndarray,
    pred_boxes: np.ndarray,
    grid_shape: tuple[int, int],
    warmup: bool = False,
) -> AssignmentResult:
    """Multi-box assignment returning location sets.

    locations must be the row-major grid of grid_shape; confidences and
    pred_boxes align with it. Selection per box follows modified_atss on live
    predictions; a location positive for several boxes resolves to the
    smallest, ignored-for-one-positive-for-another stays positive, and
    locations inside no box are negative.
    """
    h, w = grid_shape
    if len(locations) != h * w:
        raise ValueError(f"expected {h * w} locations, got {len(locations)}")
    stride = locations[0].stride
    roles, gt_idx, thresholds = assign_arrays(
        h, w, stride, gt_boxes, np.asarray(confidences), np.asarray(pred_boxes),
        warmup=warmup,
    )
    positives = frozenset(locations[i] for i in np.flatnonzero(roles == POS))
    ignored = frozenset(locations[i] for i in np.flatnonzero(roles == IGN))
    negatives = frozenset(locations[i] for i in np.flatnonzero(roles == NEG))
    box_index = {locations[i]: int(gt_idx[i]) for i in np.flatnonzero(roles == POS)}
    return AssignmentResult(
        positives=positives,
        ignored=ignored,
        negatives=negatives,
        threshold=None,
        box_index=box_index,
        thresholds=tuple(thresholds),
    )
