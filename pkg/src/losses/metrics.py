"""Segmentation metrics over label maps."""

from __future__ import annotations

from dataclasses import dataclass
import logging

import numpy as np
from sklearn.metrics import confusion_matrix

from src.errors import EmptyInputError, ShapeError, ValidationError
from src.losses.objectives import LabelMap

LOG = logging.getLogger("semsplat.metrics")


@dataclass(frozen=True, eq=False)
class SegmentationMetrics:
    miou: float
    acc: float
    class_acc: float
    confusion: np.ndarray
    iou: np.ndarray
    pixels: int
    unlabeled: np.ndarray

    @property
    def gt_pixels(self) -> np.ndarray:
        return self.confusion.sum(axis=1) + self.unlabeled

    def as_dict(self) -> dict[str, float]:
        return {"miou": self.miou, "acc": self.acc, "class_acc": self.class_acc, "pixels": self.pixels}

    def report_lines(self) -> list[str]:
        """key=value lines; per-class IoU is 'nan' when the class never occurs."""
        lines = [f"miou={self.miou:.6f}", f"acc={self.acc:.6f}", f"class_acc={self.class_acc:.6f}", f"pixels={self.pixels}"]
        lines.append(f"unlabeled={int(self.unlabeled.sum())}")
        lines += [f"iou_{c}={v:.6f}" for c, v in enumerate(self.iou)]
        return lines


def _as_label_map(labels, num_classes: int) -> LabelMap:
    if isinstance(labels, LabelMap):
        if labels.num_classes != num_classes:
            raise ValidationError(f"Label map has {labels.num_classes} classes, expected {num_classes}")
        return labels
    return LabelMap(np.asarray(labels), num_classes)


def segmentation_metrics(gt, pred, num_classes: int | None = None) -> SegmentationMetrics:
    """mIoU, pixel accuracy, mean class accuracy and confusion[gt][pred].

    Pixels that gt marks as ignore are dropped. A labeled gt pixel left
    as ignore in pred (an uncovered render pixel) is a miss for its gt
    class: it is not in the K x K confusion but counts in ``unlabeled``,
    as a false negative and in the accuracy denominator. IoU is averaged
    over classes present in gt or pred; class accuracy over classes
    present in gt.
    """
    if num_classes is None:
        if not isinstance(gt, LabelMap):
            raise ValidationError("num_classes is required for raw label arrays")
        num_classes = gt.num_classes
    gt = _as_label_map(gt, num_classes)
    pred = _as_label_map(pred, num_classes)
    if gt.shape != pred.shape:
        raise ShapeError(f"Label maps differ in shape: {gt.shape} vs {pred.shape}")
    if not np.any(gt.valid):
        raise EmptyInputError("Ground truth has no labeled pixel")
    mask = gt.valid & pred.valid
    if np.any(mask):
        conf = confusion_matrix(gt.labels[mask], pred.labels[mask], labels=np.arange(num_classes))
    else:
        conf = np.zeros((num_classes, num_classes), dtype=np.int64)
    unlabeled = np.bincount(gt.labels[gt.valid & ~pred.valid], minlength=num_classes)[:num_classes]
    tp = np.diag(conf).astype(np.float64)
    gt_count = conf.sum(axis=1) + unlabeled
    pred_count = conf.sum(axis=0)
    union = gt_count + pred_count - tp
    with np.errstate(divide="ignore", invalid="ignore"):
        iou = np.where(union > 0, tp / union, np.nan)
        recall = np.where(gt_count > 0, tp / gt_count, np.nan)
    total = int(gt_count.sum())
    metrics = SegmentationMetrics(
        miou=float(np.nanmean(iou)),
        acc=float(tp.sum() / total),
        class_acc=float(np.nanmean(recall)),
        confusion=conf,
        iou=iou,
        pixels=total,
        unlabeled=unlabeled,
    )
    LOG.debug(
        "metrics over %d pixels (%d unlabeled in pred): miou=%.4f acc=%.4f",
        total, int(unlabeled.sum()), metrics.miou, metrics.acc,
    )
    return metrics
