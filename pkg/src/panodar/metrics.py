"""Confusion-matrix based segmentation metrics (per-class IoU, mIoU)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, InvalidInputError

IGNORE_INDEX = 255


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """Rows are ground truth, columns are predictions; int64 counts."""

    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1] or counts.shape[0] < 1:
            raise InvalidInputError(f"confusion matrix must be square, got {counts.shape}")
        if (counts < 0).any():
            raise InvalidInputError("confusion counts must be non-negative")
        object.__setattr__(self, "counts", counts)

    @classmethod
    def zeros(cls, num_classes: int) -> "ConfusionMatrix":
        return cls(np.zeros((num_classes, num_classes), dtype=np.int64))

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.num_classes != self.num_classes:
            raise InvalidInputError("cannot merge matrices with different class counts")
        return ConfusionMatrix(self.counts + other.counts)

    def __eq__(self, other) -> bool:
        return isinstance(other, ConfusionMatrix) and np.array_equal(self.counts, other.counts)

    def accumulate(self, gt, pred, ignore_index: int = IGNORE_INDEX) -> "ConfusionMatrix":
        return accumulate(self, gt, pred, ignore_index)


def accumulate(cm: ConfusionMatrix, gt, pred, ignore_index: int = IGNORE_INDEX) -> ConfusionMatrix:
    gt = np.asarray(gt)
    pred = np.asarray(pred)
    if gt.shape != pred.shape:
        raise InvalidInputError(f"ground truth {gt.shape} and prediction {pred.shape} differ in shape")
    if gt.dtype.kind not in "iub" or pred.dtype.kind not in "iub":
        raise InvalidInputError("label maps must hold integer class ids")
    c = cm.num_classes
    gt = gt.astype(np.int64).ravel()
    pred = pred.astype(np.int64).ravel()
    keep = gt != ignore_index
    gt, pred = gt[keep], pred[keep]
    if gt.size and (gt.min() < 0 or gt.max() >= c):
        raise InvalidInputError(f"ground-truth labels must lie in [0, {c}) or equal {ignore_index}")
    if pred.size and (pred.min() < 0 or pred.max() >= c):
        raise InvalidInputError(f"predicted labels must lie in [0, {c})")
    counts = np.bincount(gt * c + pred, minlength=c * c).reshape(c, c)
    return ConfusionMatrix(cm.counts + counts)


def iou_per_class(cm: ConfusionMatrix) -> list[float | None]:
    """IoU per class, ``None`` where the class never appears in gt or pred."""
    tp = np.diag(cm.counts)
    denom = cm.counts.sum(axis=0) + cm.counts.sum(axis=1) - tp
    return [float(t) / float(d) if d else None for t, d in zip(tp, denom)]


def mean_iou(cm: ConfusionMatrix) -> float:
    defined = [v for v in iou_per_class(cm) if v is not None]
    if not defined:
        raise DegenerateInputError("no class has a defined IoU")
    return sum(defined) / len(defined)


def evaluate(gt, pred, num_classes: int, ignore_index: int = IGNORE_INDEX) -> ConfusionMatrix:
    return accumulate(ConfusionMatrix.zeros(num_classes), gt, pred, ignore_index)
