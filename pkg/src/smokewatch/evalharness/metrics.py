"""Image-level detection metrics and time-to-detect reporting."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# cumulative report bounds: 60 seconds, 3 minutes, 5 minutes
TIME_BUCKET_BOUNDS = (60.0, 180.0, 300.0)


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.tn, self.fp, self.fn) < 0:
            raise ValueError("counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


@dataclass(frozen=True)
class DetectionDelay:
    """Per-event timing: when smoke started and when it was detected.

    detected_at is None when the event was never detected within the
    evaluation horizon.
    """

    event_id: str
    smoke_start: float
    detected_at: float | None

    def __post_init__(self):
        if self.detected_at is not None and self.detected_at < self.smoke_start:
            raise ValueError(f"event {self.event_id}: detection precedes smoke start")

    @property
    def delay(self) -> float | None:
        if self.detected_at is None:
            return None
        return self.detected_at - self.smoke_start


def confusion_counts(detections_per_image, labels) -> ConfusionCounts:
    """Image-level counts: an image is called wildfire iff it has a detection.

    Args:
        detections_per_image: per-image detection lists (or counts).
        labels: per-image binary ground truth, aligned.
    """
    if len(detections_per_image) != len(labels):
        raise ValueError(
            f"got {len(detections_per_image)} detection lists for {len(labels)} labels"
        )
    tp = tn = fp = fn = 0
    for dets, label in zip(detections_per_image, labels):
        n = dets if isinstance(dets, int) else len(dets)
        predicted = n > 0
        actual = bool(label)
        if predicted and actual:
            tp += 1
        elif predicted and not actual:
            fp += 1
        elif not predicted and actual:
            fn += 1
        else:
            tn += 1
    return ConfusionCounts(tp=tp, tn=tn, fp=fp, fn=fn)


def metrics(c: ConfusionCounts) -> dict[str, float | None]:
    """Accuracy, precision, TPR, FPR; None where the denominator is zero."""
    if c.total == 0:
        raise ValueError("cannot compute metrics over zero images")

    def ratio(num: int, den: int) -> float | None:
        return num / den if den else None

    return {
        "accuracy": (c.tp + c.tn) / c.total,
        "precision": ratio(c.tp, c.tp + c.fp),
        "tpr": ratio(c.tp, c.tp + c.fn),
        "fpr": ratio(c.fp, c.fp + c.tn),
    }


def time_to_detect_report(delays: list[DetectionDelay]) -> tuple[float, ...]:
    """Cumulative fraction of events detected within each bucket.

    Buckets are TIME_BUCKET_BOUNDS plus a final unbounded bucket covering
    every detected event; fractions are over all events, so missed events
    hold the final bucket below 1.
    """
    if not delays:
        raise ValueError("delays must be non-empty")
    n = len(delays)
    detected = [d.delay for d in delays if d.delay is not None]
    out = [sum(1 for v in detected if v <= bound) / n for bound in TIME_BUCKET_BOUNDS]
    out.append(len(detected) / n)
    return tuple(out)


def mean_detection_advantage(
    model_delays: list[DetectionDelay], human_delays: list[DetectionDelay]
) -> tuple[float, int, int]:
    """Mean of (human delay - model delay) over events both sides detected.

    Positive values mean the model is faster. Events missing from either
    side, or undetected on either side, are excluded.

    Returns:
        (advantage_seconds, paired_count, excluded_count)
    """
    model_by_id = {d.event_id: d for d in model_delays}
    human_by_id = {d.event_id: d for d in human_delays}
    all_ids = set(model_by_id) | set(human_by_id)
    diffs = []
    for event_id in all_ids:
        m = model_by_id.get(event_id)
        h = human_by_id.get(event_id)
        if m is None or h is None or m.delay is None or h.delay is None:
            continue
        diffs.append(h.delay - m.delay)
    if not diffs:
        raise ValueError("no paired detected events")
    excluded = len(all_ids) - len(diffs)
    return float(np.mean(diffs)), len(diffs), excluded
