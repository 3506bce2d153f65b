"""Evaluation harness: image-level metrics, timing reports, synthetic corpus."""

from .metrics import (
    TIME_BUCKET_BOUNDS,
    ConfusionCounts,
    DetectionDelay,
    confusion_counts,
    mean_detection_advantage,
    metrics,
    time_to_detect_report,
)
from .synth import (
    CorpusManifest,
    SceneRecord,
    SynthParams,
    load_manifest,
    load_samples,
    render_scene,
    synth_corpus,
)

__all__ = [
    "TIME_BUCKET_BOUNDS",
    "ConfusionCounts",
    "CorpusManifest",
    "DetectionDelay",
    "SceneRecord",
    "SynthParams",
    "confusion_counts",
    "load_manifest",
    "load_samples",
    "mean_detection_advantage",
    "metrics",
    "render_scene",
    "synth_corpus",
    "time_to_detect_report",
]
