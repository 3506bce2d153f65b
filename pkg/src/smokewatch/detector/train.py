"""Training: live-prediction sample assignment, composite loss, SGD."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..assignment import POS, assign_arrays
from ..geometry import BoundingBox, decode_boxes_array, location_coords
from ..losses import LossBreakdown, composite_loss_arrays
from ..neuralops.ops import sigmoid
from ..neuralops.params import DivergenceError, sgd_step
from .model import SmokeDetector

logger = logging.getLogger(__name__)

# image normalization used everywhere an image enters the model
_NORM_MEAN = 0.45
_NORM_STD = 0.225


def preprocess_image(pixels: np.ndarray) -> np.ndarray:
    """uint8 (H, W, C) or (H, W) pixels -> normalized float32 (C, H, W)."""
    arr = np.asarray(pixels)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    arr = arr.astype(np.float32) / 255.0
    arr = (arr - _NORM_MEAN) / _NORM_STD
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


@dataclass
class TrainSample:
    """One labeled image: uint8 HWC pixels plus ground-truth smoke boxes."""

    pixels: np.ndarray
    boxes: list[BoundingBox] = field(default_factory=list)


def _flip_sample(sample: TrainSample, width: int) -> TrainSample:
    flipped = np.ascontiguousarray(sample.pixels[:, ::-1])
    boxes = [BoundingBox(width - b.x1, b.y0, width - b.x0, b.y1) for b in sample.boxes]
    return TrainSample(pixels=flipped, boxes=boxes)


def build_targets(maps, gt_boxes_batch, warmup: bool):
    """Assignment + target encoding for one forward pass.

    Returns flattened (pos_mask, neg_mask, reg_targets, cen_targets) over
    batch*H*W locations, row-major per image.
    """
    B = maps.cls_logits.shape[0]
    h, w = maps.grid_shape
    n = h * w
    xs, ys = location_coords(h, w, maps.stride)
    conf = sigmoid(maps.cls_logits[:, 0].astype(np.float64)).reshape(B, n)
    reg = maps.reg.astype(np.float64).reshape(B, 4, n)

    pos_mask = np.zeros(B * n, dtype=bool)
    neg_mask = np.zeros(B * n, dtype=bool)
    reg_targets = np.zeros((B * n, 4), dtype=np.float64)
    cen_targets = np.zeros(B * n, dtype=np.float64)

    for b in range(B):
        boxes = gt_boxes_batch[b]
        if not boxes:
            neg_mask[b * n : (b + 1) * n] = True
            continue
        pred_boxes = decode_boxes_array(xs, ys, reg[b].T)
        roles, gt_idx, _ = assign_arrays(
            h, w, maps.stride, boxes, conf[b], pred_boxes, warmup=warmup
        )
        base = b * n
        pos = np.flatnonzero(roles == POS)
        pos_mask[base + pos] = True
        neg_mask[base : base + n] = roles == 0
        if pos.size:
            bx = np.array([boxes[i].as_tuple() for i in gt_idx[pos]])
            l = xs[pos] - bx[:, 0]
            t = ys[pos] - bx[:, 1]
            r = bx[:, 2] - xs[pos]
            bt = bx[:, 3] - ys[pos]
            reg_targets[base + pos] = np.stack([l, t, r, bt], axis=1)
            cen_targets[base + pos] = np.sqrt(
                (np.minimum(l, r) / np.maximum(l, r))
                * (np.minimum(t, bt) / np.maximum(t, bt))
            )
    return pos_mask, neg_mask, reg_targets, cen_targets


def train_step(
    model: SmokeDetector,
    batch: list[TrainSample],
    step: int,
    lr: float | None = None,
) -> LossBreakdown:
    """One optimization step on a batch of labeled images.

    Forward, assign positives from the live predictions (center sampling
    during the warm-up steps), compute the composite loss, backpropagate, and
    apply SGD. Raises DivergenceError naming the term when the loss goes
    non-finite.
    """
    if not batch:
        raise ValueError("batch must be non-empty")
    cfg = model.config
    images = np.stack([preprocess_image(s.pixels) for s in batch])
    maps = model.forward(images)
    B = len(batch)
    h, w = maps.grid_shape
    n = h * w

    warmup = step < cfg.warmup_steps
    pos_mask, neg_mask, reg_targets, cen_targets = build_targets(
        maps, [s.boxes for s in batch], warmup
    )
    breakdown, (dcls, dreg, dcen) = composite_loss_arrays(
        maps.cls_logits.reshape(-1).astype(np.float64),
        maps.reg.transpose(0, 2, 3, 1).reshape(-1, 4).astype(np.float64),
        maps.cen_logits.reshape(-1).astype(np.float64),
        pos_mask,
        neg_mask,
        reg_targets,
        cen_targets,
        alpha=cfg.focal_alpha,
        gamma=cfg.focal_gamma,
    )
    for term, value in (("cls", breakdown.cls), ("reg", breakdown.reg), ("cen", breakdown.cen)):
        if not np.isfinite(value):
            raise DivergenceError(f"non-finite {term} loss at step {step}")

    model.backward(
        dcls.reshape(B, 1, h, w).astype(np.float32),
        dreg.reshape(B, h, w, 4).transpose(0, 3, 1, 2).astype(np.float32),
        dcen.reshape(B, 1, h, w).astype(np.float32),
    )
    sgd_step(model.params, lr=cfg.lr if lr is None else lr, momentum=cfg.momentum)
    return breakdown


def fit(
    model: SmokeDetector,
    dataset: list[TrainSample],
    steps: int | None = None,
    rng: np.random.Generator | None = None,
    flip_augment: bool = True,
    log_every: int = 100,
) -> list[LossBreakdown]:
    """Train for a fixed number of steps on randomly sampled batches."""
    cfg = model.config
    steps = cfg.train_steps if steps is None else steps
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    width = cfg.input_size[1]
    history = []
    for step in range(steps):
        idx = rng.integers(0, len(dataset), size=cfg.batch_size)
        batch = []
        for i in idx:
            s = dataset[int(i)]
            if flip_augment and rng.random() < 0.5:
                s = _flip_sample(s, width)
            batch.append(s)
        # linear learning-rate ramp over the warm-up to keep early steps stable
        lr = cfg.lr * min(1.0, (step + 1) / max(cfg.warmup_steps, 1))
        breakdown = train_step(model, batch, step, lr=lr)
        history.append(breakdown)
        if log_every and (step + 1) % log_every == 0:
            recent = history[-log_every:]
            logger.info(
                "step %d: total %.4f (cls %.4f reg %.4f cen %.4f, n_pos %d)",
                step + 1,
                float(np.mean([b.total for b in recent])),
                breakdown.cls, breakdown.reg, breakdown.cen, breakdown.n_pos,
            )
    return history
