"""Pixel confusion counts and the six segmentation metrics.

Zero denominators follow the perfect-empty convention: a metric is 1 when
neither the ground truth nor the prediction has a positive pixel, else 0.
"""

from dataclasses import dataclass

import numpy as np
from pydantic import BaseModel

from .errors import InvalidArgumentError, ShapeMismatchError
from .tensor import Tensor

METRIC_NAMES = ("dsc", "iou", "recall", "precision", "accuracy", "f2")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    @property
    def empty(self) -> bool:
        return self.tp + self.fp + self.fn == 0


class SegmentationMetrics(BaseModel):
    dsc: float
    iou: float
    recall: float
    precision: float
    accuracy: float
    f2: float


def confusion(pred: Tensor, gt: Tensor, threshold: float = 0.5) -> ConfusionCounts:
    """Counts with ``pred >= threshold`` as positive and ``gt == 1`` as foreground"""
    if pred.shape != gt.shape:
        raise ShapeMismatchError(f"prediction {pred.shape} vs ground truth {gt.shape}")
    if not 0.0 < threshold < 1.0:
        raise InvalidArgumentError(f"threshold must be in (0, 1), got {threshold}")
    positive = pred >= threshold
    truth = gt >= 0.5
    tp = int(np.count_nonzero(positive & truth))
    fp = int(np.count_nonzero(positive & ~truth))
    fn = int(np.count_nonzero(~positive & truth))
    return ConfusionCounts(tp, fp, fn, positive.size - tp - fp - fn)


def metrics_from_counts(c: ConfusionCounts) -> SegmentationMetrics:
    def ratio(num: float, den: float) -> float:
        if den == 0:
            return 1.0 if c.empty else 0.0
        return num / den

    recall = ratio(c.tp, c.tp + c.fn)
    precision = ratio(c.tp, c.tp + c.fp)
    f2_den = 4 * precision + recall
    return SegmentationMetrics(
        dsc=ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn),
        iou=ratio(c.tp, c.tp + c.fp + c.fn),
        recall=recall,
        precision=precision,
        accuracy=ratio(c.tp + c.tn, c.total),
        f2=5 * precision * recall / f2_den if f2_den else 0.0,
    )
