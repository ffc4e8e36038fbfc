"""MetricsReport schema, baseline speedups and JSON/CSV emission"""

import csv
import hashlib
import json
import logging
from pathlib import Path

from pydantic import BaseModel, Field, ValidationError

from .bench import FpsStats
from .errors import ConfigurationError, InvalidArgumentError
from .metrics import METRIC_NAMES, SegmentationMetrics
from .model import NetworkConfig

logger = logging.getLogger(__name__)

CONVENTIONS = {
    "aggregation": "per-image metrics, arithmetic mean over images",
    "threshold_rule": "pred >= threshold counts as positive",
    "empty_images": "0/0 metric is 1 when ground truth and prediction are both empty, else 0",
    "fps": "forward only, batch 1, wall clock; hardware dependent",
}


class ImageMetrics(SegmentationMetrics):
    id: str


class BaselineRow(BaseModel):
    """Externally published comparison row (not reproduced here)"""

    method: str
    fps: float = Field(gt=0)
    mdsc: float | None = None
    miou: float | None = None
    recall: float | None = None
    precision: float | None = None
    accuracy: float | None = None


class Speedup(BaseModel):
    method: str
    baseline_fps: float
    ratio: float


class MetricsReport(BaseModel):
    config_fingerprint: str = ""
    checkpoint_hash: str = ""
    hardware: str = ""
    threshold: float = 0.5
    conventions: dict[str, str] = Field(default_factory=lambda: dict(CONVENTIONS))
    per_image: list[ImageMetrics] = Field(default_factory=list)
    means: SegmentationMetrics | None = None
    fps: FpsStats | None = None
    speedup: list[Speedup] | None = None


def config_fingerprint(config: NetworkConfig) -> str:
    canonical = json.dumps(config.model_dump(mode="json"), sort_keys=True)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def load_baselines(path: str | Path) -> list[BaselineRow]:
    """Published comparison rows: a JSON list of {method, fps, mdsc, ...} objects"""
    try:
        rows = json.loads(Path(path).read_text())
        return [BaselineRow.model_validate(row) for row in rows]
    except (json.JSONDecodeError, ValidationError, TypeError) as e:
        raise ConfigurationError(f"invalid baselines file {path}: {e}") from None


def speedups(fps: float, baselines: list[BaselineRow]) -> list[Speedup]:
    """Ratio of our FPS to each baseline's, rounded to two decimals"""
    return [Speedup(method=b.method, baseline_fps=b.fps, ratio=round(fps / b.fps, 2)) for b in baselines]


def with_speedups(report: MetricsReport, baselines: list[BaselineRow] | None) -> MetricsReport:
    if not baselines:
        return report
    if report.fps is None:
        logger.warning("Baseline rows given but FPS was not measured; speedup section omitted")
        return report
    return report.model_copy(update={"speedup": speedups(report.fps.value, baselines)})


def write_per_image_csv(report: MetricsReport, path: str | Path):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["id", *METRIC_NAMES])
        for row in report.per_image:
            writer.writerow([row.id, *(repr(getattr(row, name)) for name in METRIC_NAMES)])


def read_per_image_csv(path: str | Path) -> list[ImageMetrics]:
    with open(path, newline="") as f:
        return [ImageMetrics.model_validate(row) for row in csv.DictReader(f)]


def emit_report(report: MetricsReport, path: str | Path, baseline_rows: list[BaselineRow] | None = None, fmt: str = "json") -> MetricsReport:
    """Write the aggregate JSON or the per-image CSV; returns the report as written"""
    report = with_speedups(report, baseline_rows)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "json":
        path.write_text(report.model_dump_json(indent=2, exclude_none=True))
    elif fmt == "csv":
        write_per_image_csv(report, path)
    else:
        raise InvalidArgumentError(f"unknown report format: {fmt}")
    logger.info(f"Wrote {fmt} report {path}")
    return report


def emit_all(report: MetricsReport, json_path: str | Path, baseline_rows: list[BaselineRow] | None = None) -> MetricsReport:
    """Aggregate JSON at ``json_path`` plus the per-image CSV next to it"""
    report = emit_report(report, json_path, baseline_rows, "json")
    if report.per_image:
        emit_report(report, Path(json_path).with_suffix(".csv"), fmt="csv")
    return report


def read_report(path: str | Path) -> MetricsReport:
    return MetricsReport.model_validate_json(Path(path).read_text())
