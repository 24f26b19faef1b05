"""Training objective terms with analytic gradients.

All losses take ground truth as a LabelMap (or an image for color) and a
predicted K x H x W probability map, and return a LossValue carrying the
scalar and its gradient with respect to the prediction.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, NamedTuple

import numpy as np

from src.config import IGNORE_LABEL, LossConfig
from src.errors import EmptyInputError, ShapeError, ValidationError

SUM_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class LabelMap:
    """Per-pixel class ids in [0, K-1], or IGNORE_LABEL."""

    labels: np.ndarray
    num_classes: int

    def __post_init__(self) -> None:
        labels = np.asarray(self.labels)
        if labels.ndim != 2:
            raise ShapeError(f"Label map must be 2D, got shape {labels.shape}")
        if labels.dtype.kind not in "iu":
            if not np.all(np.equal(np.mod(labels, 1), 0)):
                raise ValidationError("Label map holds non-integer values")
        labels = labels.astype(np.int64)
        if self.num_classes < 1 or self.num_classes >= IGNORE_LABEL:
            raise ValidationError(f"num_classes must lie in [1, {IGNORE_LABEL - 1}], got {self.num_classes}")
        bad = (labels != IGNORE_LABEL) & ((labels < 0) | (labels >= self.num_classes))
        if np.any(bad):
            raise ValidationError(
                f"Label {int(labels[bad][0])} outside [0, {self.num_classes - 1}] and not ignore ({IGNORE_LABEL})"
            )
        object.__setattr__(self, "labels", labels)

    @property
    def shape(self) -> tuple[int, int]:
        return self.labels.shape

    @property
    def valid(self) -> np.ndarray:
        return self.labels != IGNORE_LABEL

    def region(self, label: int) -> np.ndarray:
        """Mask of the pixels whose ground-truth class is ``label``."""
        return self.labels == label

    def one_hot(self) -> np.ndarray:
        """K x H x W indicator map; ignore pixels are all-zero."""
        return np.stack([self.region(c) for c in range(self.num_classes)]).astype(np.float64)


class LossValue(NamedTuple):
    value: float
    grad: np.ndarray


class LossParts(NamedTuple):
    sem: float = 0.0
    color: float = 0.0
    rs: float = 0.0


def _check_probs(gt: LabelMap, pred: np.ndarray) -> np.ndarray:
    pred = np.asarray(pred, dtype=np.float64)
    if pred.shape != (gt.num_classes, *gt.shape):
        raise ShapeError(f"Prediction {pred.shape} does not match {gt.num_classes} classes on {gt.shape}")
    return pred


def sem_ce(gt: LabelMap, pred: np.ndarray, config: LossConfig | None = None) -> LossValue:
    """Mean cross-entropy over non-ignore pixels."""
    config = config or LossConfig()
    pred = _check_probs(gt, pred)
    if np.any(pred.sum(axis=0) > 1.0 + SUM_TOL):
        raise ValidationError("Predicted distributions sum above 1")
    rows, cols = np.nonzero(gt.valid)
    n = len(rows)
    if n == 0:
        raise EmptyInputError("Every pixel is ignored; cross-entropy is undefined")
    cls = gt.labels[rows, cols]
    p = np.clip(pred[cls, rows, cols], config.prob_floor, 1.0)
    grad = np.zeros_like(pred)
    grad[cls, rows, cols] = -1.0 / (n * p)
    return LossValue(float(np.mean(-np.log(p))), grad)


def color_mse(gt: np.ndarray, pred: np.ndarray) -> LossValue:
    gt = np.asarray(gt, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    if gt.shape != pred.shape:
        raise ShapeError(f"Image shapes differ: {gt.shape} vs {pred.shape}")
    if gt.size == 0:
        raise EmptyInputError("Empty images")
    diff = pred - gt
    return LossValue(float(np.mean(diff * diff)), 2.0 * diff / diff.size)


def _neighbor_pairs(labels: np.ndarray, valid: np.ndarray, axis: int):
    """Flat index pairs (a, b) of same-region neighbors along ``axis`` (0: rows)."""
    h, w = labels.shape
    idx = np.arange(h * w).reshape(h, w)
    if axis == 0:
        a, b = idx[:-1, :], idx[1:, :]
    else:
        a, b = idx[:, :-1], idx[:, 1:]
    flat_l, flat_v = labels.reshape(-1), valid.reshape(-1)
    a, b = a.reshape(-1), b.reshape(-1)
    keep = flat_v[a] & flat_v[b] & (flat_l[a] == flat_l[b])
    return a[keep], b[keep], flat_l[a[keep]]


def regional_smoothness(
    gt: LabelMap,
    pred: np.ndarray,
    config: LossConfig | None = None,
    tie_eps: float | None = None,
) -> LossValue:
    """Sum of |pred^l(b) - pred^l(a)| over neighbor pairs inside each region R_l.

    Pairs are (i, j)-(i+1, j) and (i, j)-(i, j+1) with i the row index.
    The subgradient is 0 where the difference is within ``tie_eps``.
    """
    config = config or LossConfig()
    tie = config.tie_eps if tie_eps is None else tie_eps
    pred = _check_probs(gt, pred)
    k = gt.num_classes
    flat = pred.reshape(k, -1)
    grad = np.zeros(flat.size)
    total = 0.0
    for axis in (0, 1):
        a, b, cls = _neighbor_pairs(gt.labels, gt.valid, axis)
        if len(a) == 0:
            continue
        diff = flat[cls, b] - flat[cls, a]
        total += float(np.sum(np.abs(diff)))
        sign = np.where(np.abs(diff) <= tie, 0.0, np.sign(diff))
        np.add.at(grad, cls * flat.shape[1] + b, sign)
        np.add.at(grad, cls * flat.shape[1] + a, -sign)
    return LossValue(total, grad.reshape(pred.shape))


def total_loss(parts: LossParts | Mapping[str, float], config: LossConfig | None = None) -> float:
    """lambda_sem * sem + lambda_c * color + lambda_rs * rs."""
    config = config or LossConfig()
    if isinstance(parts, Mapping):
        unknown = set(parts) - set(LossParts._fields)
        if unknown:
            raise ValidationError(f"Unknown loss parts: {sorted(unknown)}")
        parts = LossParts(**parts)
    return config.lambda_sem * parts.sem + config.lambda_c * parts.color + config.lambda_rs * parts.rs
