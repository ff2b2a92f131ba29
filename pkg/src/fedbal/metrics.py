"""Confusion counts, per-class IoU, mean IoU, and the worker weight."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from fedbal.errors import InvalidArgumentError

logger = logging.getLogger(__name__)


@dataclass(eq=False)
class ConfusionCounts:
    """``matrix[t, p]`` counts pixels of true class ``t`` predicted as ``p``."""

    matrix: np.ndarray

    @property
    def n_classes(self) -> int:
        return self.matrix.shape[0]

    @property
    def total(self) -> int:
        return int(self.matrix.sum())

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        if other.matrix.shape != self.matrix.shape:
            raise InvalidArgumentError("cannot merge confusion counts of different class counts")
        return ConfusionCounts(self.matrix + other.matrix)

    @classmethod
    def zeros(cls, n_classes: int) -> "ConfusionCounts":
        return cls(np.zeros((n_classes, n_classes), dtype=np.int64))


def confusion_counts(pred_labels: np.ndarray, true_labels: np.ndarray, n_classes: int) -> ConfusionCounts:
    pred = np.asarray(pred_labels)
    true = np.asarray(true_labels)
    if pred.shape != true.shape:
        raise InvalidArgumentError(f"prediction shape {pred.shape} != label shape {true.shape}")
    if pred.size:
        lo = min(pred.min(), true.min())
        hi = max(pred.max(), true.max())
        if lo < 0 or hi >= n_classes:
            raise InvalidArgumentError(f"label values must lie in [0, {n_classes})")
    flat = true.ravel().astype(np.int64) * n_classes + pred.ravel().astype(np.int64)
    matrix = np.bincount(flat, minlength=n_classes * n_classes).reshape(n_classes, n_classes)
    return ConfusionCounts(matrix.astype(np.int64))


def class_iou(counts: ConfusionCounts, c: int) -> float | None:
    """IoU of class ``c``, or ``None`` when it is absent from both truth and prediction."""
    if not 0 <= c < counts.n_classes:
        raise InvalidArgumentError(f"class index {c} out of range")
    m = counts.matrix
    tp = int(m[c, c])
    fn = int(m[c, :].sum()) - tp
    fp = int(m[:, c].sum()) - tp
    denom = tp + fn + fp
    if denom == 0:
        return None
    return tp / denom


def per_class_iou(counts: ConfusionCounts) -> list[float | None]:
    return [class_iou(counts, c) for c in range(counts.n_classes)]


def mean_iou(counts: ConfusionCounts) -> float:
    values = [v for v in per_class_iou(counts) if v is not None]
    if not values:
        raise InvalidArgumentError("every class is absent; nothing to average")
    return sum(values) / len(values)


def worker_weight(counts: ConfusionCounts, priority_class: int) -> float:
    """Priority-class IoU divided by mean IoU.

    Returns 0 when the priority class is absent from the evaluation or the
    mean IoU is 0.
    """
    priority = class_iou(counts, priority_class)
    miou = mean_iou(counts)
    if priority is None:
        return 0.0
    if miou == 0.0:
        logger.warning("mean IoU is 0; worker weight set to 0")
        return 0.0
    return priority / miou


@dataclass
class WorkerEval:
    worker_id: int
    per_class_iou: list[float | None]
    miou: float
    theta: float
