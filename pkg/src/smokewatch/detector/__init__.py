"""Detector assembly: model, training step, inference, checkpoints."""

from .checkpoint import (
    CheckpointError,
    CorruptCheckpointError,
    UnsupportedVersionError,
    load_model,
    save_model,
)
from .config import DetectorConfig
from .model import PredictionMaps, SmokeDetector
from .postprocess import Detection, decode_detections, detect, nms
from .train import TrainSample, fit, preprocess_image, train_step

__all__ = [
    "CheckpointError",
    "CorruptCheckpointError",
    "Detection",
    "DetectorConfig",
    "PredictionMaps",
    "SmokeDetector",
    "TrainSample",
    "UnsupportedVersionError",
    "decode_detections",
    "detect",
    "fit",
    "load_model",
    "nms",
    "preprocess_image",
    "save_model",
    "train_step",
]
