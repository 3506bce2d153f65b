"""Composite detection loss: focal + IoU + centerness, with analytic gradients.

All three terms are written elementwise over numpy arrays (scalars work too)
and return both the loss and its derivative with respect to the head output,
so the training loop needs no numeric differentiation. The composite sums
classification loss over positives and negatives, box and centerness losses
over positives only, and divides everything by the positive count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import RegressionVector

POSITIVE = "positive"
NEGATIVE = "negative"
IGNORED = "ignored"

_EPS_IOU = 1e-8


@dataclass(frozen=True)
class SampleTarget:
    """Training target for one grid location.

    Positive samples carry the ground-truth regression vector and centerness
    target; ignored samples are excluded from every loss term.
    """

    role: str
    label: int
    reg: RegressionVector | None = None
    centerness: float | None = None

    def __post_init__(self):
        if self.role not in (POSITIVE, NEGATIVE, IGNORED):
            raise ValueError(f"unknown role {self.role!r}")
        if self.role == POSITIVE:
            if self.label != 1 or self.reg is None or self.centerness is None:
                raise ValueError("positive samples need label=1, reg, and centerness")
        elif self.role == NEGATIVE and self.label != 0:
            raise ValueError("negative samples must have label=0")


@dataclass(frozen=True)
class LossBreakdown:
    """Raw term sums plus the positive count; total is the normalized loss."""

    cls: float
    reg: float
    cen: float
    n_pos: int

    @property
    def total(self) -> float:
        return (self.cls + self.reg + self.cen) / max(self.n_pos, 1)


def _maybe_scalar(*arrays):
    out = tuple(float(a) if np.ndim(a) == 0 else a for a in arrays)
    return out if len(out) > 1 else out[0]


def focal_loss(logit, label, alpha: float = 0.25, gamma: float = 2.0):
    """Focal loss on a sigmoid logit, elementwise.

    With p = sigmoid(logit) and p_t = p for label 1 else 1-p:
    loss = -alpha_t * (1 - p_t)^gamma * log(p_t).

    Returns:
        (loss, dloss/dlogit), same shape as the inputs.
    """
    if not (0.0 < alpha < 1.0):
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    if gamma < 0:
        raise ValueError(f"gamma must be >= 0, got {gamma}")
    logit = np.asarray(logit, dtype=np.float64)
    pos = np.asarray(label) == 1
    z_t = np.where(pos, logit, -logit)
    log_pt = -np.logaddexp(0.0, -z_t)
    p_t = np.exp(log_pt)
    q_t = np.exp(-np.logaddexp(0.0, z_t))  # 1 - p_t, computed stably
    alpha_t = np.where(pos, alpha, 1.0 - alpha)
    mod = q_t**gamma
    loss = -alpha_t * mod * log_pt
    dz = alpha_t * mod * (gamma * p_t * log_pt - q_t)
    dlogit = np.where(pos, dz, -dz)
    return _maybe_scalar(loss, dlogit)


def iou_loss(pred, gt):
    """-ln(IoU) between boxes decoded from two side-distance vectors.

    Both vectors are anchored at the same location, so the overlap follows
    directly from the componentwise minima:
    I = (min(l) + min(r)) * (min(t) + min(b)).

    Args:
        pred: (..., 4) predicted (l, t, r, b), all > 0.
        gt: (..., 4) ground-truth distances, all > 0.
    Returns:
        (loss, dloss/dpred) with loss shaped (...,) and the gradient (..., 4).
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    scalar = pred.ndim == 1
    p = np.atleast_2d(pred)
    g = np.atleast_2d(gt)
    if np.any(p <= 0) or np.any(g <= 0):
        raise ValueError("iou_loss requires strictly positive side distances")

    pl, pt, pr, pb = p[:, 0], p[:, 1], p[:, 2], p[:, 3]
    gl, gt_, gr, gb = g[:, 0], g[:, 1], g[:, 2], g[:, 3]
    w_i = np.minimum(pl, gl) + np.minimum(pr, gr)
    h_i = np.minimum(pt, gt_) + np.minimum(pb, gb)
    inter = w_i * h_i
    area_p = (pl + pr) * (pt + pb)
    area_g = (gl + gr) * (gt_ + gb)
    union = area_p + area_g - inter
    iou = np.maximum(inter / union, _EPS_IOU)
    loss = -np.log(iou)

    # dI/d(component) is the opposing intersection extent when pred is the
    # binding side of the min; dU folds in the box-area derivative.
    d_inter = np.stack(
        [
            h_i * (pl < gl),
            w_i * (pt < gt_),
            h_i * (pr < gr),
            w_i * (pb < gb),
        ],
        axis=1,
    )
    d_area = np.stack([pt + pb, pl + pr, pt + pb, pl + pr], axis=1)
    d_union = d_area - d_inter
    grad = -d_inter / inter[:, None] + d_union / union[:, None]

    if scalar:
        return float(loss[0]), grad[0]
    return loss, grad


def centerness_loss(logit, target):
    """Binary cross-entropy between sigmoid(logit) and a soft target in [0, 1].

    Returns:
        (loss, dloss/dlogit), elementwise.
    """
    logit = np.asarray(logit, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if np.any(target < 0) or np.any(target > 1) or not np.all(np.isfinite(target)):
        raise ValueError("centerness target must be finite in [0, 1]")
    loss = target * np.logaddexp(0.0, -logit) + (1.0 - target) * np.logaddexp(0.0, logit)
    p = np.exp(-np.logaddexp(0.0, -logit))
    dlogit = p - target
    return _maybe_scalar(loss, dlogit)


def composite_loss_arrays(
    cls_logits: np.ndarray,
    reg_pred: np.ndarray,
    cen_logits: np.ndarray,
    pos_mask: np.ndarray,
    neg_mask: np.ndarray,
    reg_targets: np.ndarray,
    cen_targets: np.ndarray,
    alpha: float = 0.25,
    gamma: float = 2.0,
):
    """Array-level composite loss; the hot path used by the training loop.

    Args:
        cls_logits, cen_logits: (N,) logits.
        reg_pred: (N, 4) activated side distances; only positive rows are read.
        pos_mask, neg_mask: (N,) booleans; locations in neither are ignored.
        reg_targets: (N, 4), read at positive rows.
        cen_targets: (N,), read at positive rows.
    Returns:
        (LossBreakdown, (dcls, dreg, dcen)) with gradients of breakdown.total,
        zero at ignored locations.
    """
    n = len(cls_logits)
    pos_mask = np.asarray(pos_mask, dtype=bool)
    neg_mask = np.asarray(neg_mask, dtype=bool)
    if pos_mask.shape != (n,) or neg_mask.shape != (n,):
        raise ValueError("masks must align with head outputs")
    if np.any(pos_mask & neg_mask):
        raise ValueError("a location cannot be both positive and negative")
    active = pos_mask | neg_mask
    n_pos = int(pos_mask.sum())
    denom = max(n_pos, 1)

    dcls = np.zeros(n, dtype=np.float64)
    dreg = np.zeros((n, 4), dtype=np.float64)
    dcen = np.zeros(n, dtype=np.float64)

    cls_sum = 0.0
    if active.any():
        labels = pos_mask[active].astype(np.int64)
        l_cls, g_cls = focal_loss(
            np.asarray(cls_logits, dtype=np.float64)[active], labels,
            alpha=alpha, gamma=gamma,
        )
        cls_sum = float(np.sum(l_cls, dtype=np.float64))
        dcls[active] = np.atleast_1d(g_cls) / denom

    reg_sum = 0.0
    cen_sum = 0.0
    if n_pos:
        l_reg, g_reg = iou_loss(
            np.asarray(reg_pred, dtype=np.float64)[pos_mask],
            np.asarray(reg_targets, dtype=np.float64)[pos_mask],
        )
        l_cen, g_cen = centerness_loss(
            np.asarray(cen_logits, dtype=np.float64)[pos_mask],
            np.asarray(cen_targets, dtype=np.float64)[pos_mask],
        )
        reg_sum = float(np.sum(np.atleast_1d(l_reg), dtype=np.float64))
        cen_sum = float(np.sum(np.atleast_1d(l_cen), dtype=np.float64))
        dreg[pos_mask] = np.atleast_2d(g_reg) / denom
        dcen[pos_mask] = np.atleast_1d(g_cen) / denom

    breakdown = LossBreakdown(cls=cls_sum, reg=reg_sum, cen=cen_sum, n_pos=n_pos)
    return breakdown, (dcls, dreg, dcen)


def composite_loss(
    cls_logits: np.ndarray,
    reg_pred: np.ndarray,
    cen_logits: np.ndarray,
    targets: list[SampleTarget],
    alpha: float = 0.25,
    gamma: float = 2.0,
):
    """Combine the three terms over one batch of aligned locations.

    Classification runs over positives and negatives (ignored locations are
    excluded from everything); box and centerness terms run over positives
    only. All sums divide by max(n_pos, 1).

    Args:
        cls_logits: (N,) classification logits.
        reg_pred: (N, 4) activated side distances (only positive rows are read).
        cen_logits: (N,) centerness logits.
        targets: N SampleTargets aligned with the rows.
    Returns:
        (LossBreakdown, (dcls, dreg, dcen)) as in composite_loss_arrays.
    """
    n = len(targets)
    if len(cls_logits) != n or len(reg_pred) != n or len(cen_logits) != n:
        raise ValueError(
            f"targets ({n}) must align with head outputs "
            f"({len(cls_logits)}, {len(reg_pred)}, {len(cen_logits)})"
        )
    pos_mask = np.array([t.role == POSITIVE for t in targets])
    neg_mask = np.array([t.role == NEGATIVE for t in targets])
    reg_targets = np.zeros((n, 4), dtype=np.float64)
    cen_targets = np.zeros(n, dtype=np.float64)
    for i, t in enumerate(targets):
        if t.role == POSITIVE:
            reg_targets[i] = t.reg.as_tuple()
            cen_targets[i] = t.centerness
    return composite_loss_arrays(
        cls_logits, reg_pred, cen_logits, pos_mask, neg_mask,
        reg_targets, cen_targets, alpha=alpha, gamma=gamma,
    )
