"""Dataset evaluation: infer-mode predictions scored per image, then averaged"""

import logging
import math

from tqdm import tqdm

from .data import Dataset, stack
from .errors import EmptyDatasetError, InvalidShapeError
from .metrics import METRIC_NAMES, SegmentationMetrics, confusion, metrics_from_counts
from .model import Predictor
from .report import ImageMetrics, MetricsReport

logger = logging.getLogger(__name__)


def mean_metrics(rows: list[SegmentationMetrics]) -> SegmentationMetrics:
    # fsum is exactly rounded, so the mean does not depend on row order
    return SegmentationMetrics(**{name: math.fsum(getattr(r, name) for r in rows) / len(rows) for name in METRIC_NAMES})


def evaluate(net: Predictor, dataset: Dataset, threshold: float = 0.5, batch_size: int = 4, progress: bool = False) -> MetricsReport:
    if len(dataset) == 0:
        raise EmptyDatasetError("cannot evaluate an empty dataset")
    _, h, w = dataset[0].image.shape
    if h % 8 or w % 8:
        raise InvalidShapeError(f"dataset images must be divisible by 8, got {h}x{w}")

    rows = []
    starts = range(0, len(dataset), batch_size)
    for start in tqdm(starts, desc="evaluate", leave=False, disable=not progress):
        samples = dataset.samples[start : start + batch_size]
        images, masks = stack(samples)
        probs = net.predict(images)
        for sample, prob, mask in zip(samples, probs, masks, strict=True):
            scores = metrics_from_counts(confusion(prob, mask, threshold))
            rows.append(ImageMetrics(id=sample.id, **scores.model_dump()))

    report = MetricsReport(threshold=threshold, per_image=rows, means=mean_metrics(rows))
    m = report.means
    logger.info(f"Evaluated {len(rows)} images: mDSC {m.dsc:.4f} mIoU {m.iou:.4f} recall {m.recall:.4f} precision {m.precision:.4f} accuracy {m.accuracy:.4f} F2 {m.f2:.4f}")
    return report
