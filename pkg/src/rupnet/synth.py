"""Seeded synthetic polyp-like dataset for desk-scale training and checks"""

import logging
from dataclasses import dataclass

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PositiveInt, field_validator, model_validator

from .data import Dataset, Sample, resize_bilinear
from .errors import ConfigurationError
from .tensor import Rng, get_dtype

logger = logging.getLogger(__name__)

SUPERSAMPLE = 4
MAX_ATTEMPTS = 1000


class SynthConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    count: PositiveInt = 200
    size: PositiveInt = 64
    blob_count: tuple[PositiveInt, PositiveInt] = (1, 3)
    radius_range: tuple[float, float] = Field(default=(0.05, 0.25), description="Ellipse radii as fractions of the image size")
    noise_amplitude: float = Field(default=0.1, ge=0)
    seed: int = 0

    @field_validator("size")
    @classmethod
    def _divisible_by_eight(cls, value: int) -> int:
        if value % 8:
            raise ValueError(f"size must be divisible by 8, got {value}")
        return value

    @model_validator(mode="after")
    def _ranges(self):
        lo, hi = self.radius_range
        if not 0 < lo <= hi < 0.5:
            raise ValueError(f"radius_range must satisfy 0 < lo <= hi < 0.5, got {self.radius_range}")
        if self.blob_count[0] > self.blob_count[1]:
            raise ValueError(f"blob_count range is inverted: {self.blob_count}")
        return self


@dataclass(frozen=True)
class Ellipse:
    """Rotated ellipse in pixel units; pixel (i, j) has its center at (i + 0.5, j + 0.5)"""

    cy: float
    cx: float
    ry: float
    rx: float
    angle: float

    def contains(self, y: np.ndarray, x: np.ndarray) -> np.ndarray:
        dy, dx = y - self.cy, x - self.cx
        cos, sin = np.cos(self.angle), np.sin(self.angle)
        u = dx * cos + dy * sin
        v = -dx * sin + dy * cos
        return (u / self.rx) ** 2 + (v / self.ry) ** 2 <= 1.0


def _pixel_centers(size: int, sub: int = 1) -> tuple[np.ndarray, np.ndarray]:
    coords = (np.arange(size * sub) + 0.5) / sub
    return np.meshgrid(coords, coords, indexing="ij")


def _coverage(ellipse: Ellipse, size: int) -> np.ndarray:
    """Fraction of each pixel inside the ellipse, from a 4x4 subpixel grid"""
    y, x = _pixel_centers(size, SUPERSAMPLE)
    inside = ellipse.contains(y, x).astype(np.float64)
    return inside.reshape(size, SUPERSAMPLE, size, SUPERSAMPLE).mean(axis=(1, 3))


def _place_ellipses(cfg: SynthConfig, gen: np.random.Generator) -> tuple[list[Ellipse], np.ndarray]:
    y, x = _pixel_centers(cfg.size)
    lo, hi = cfg.radius_range
    for _ in range(MAX_ATTEMPTS):
        ellipses = []
        for _ in range(int(gen.integers(cfg.blob_count[0], cfg.blob_count[1] + 1))):
            ry, rx = gen.uniform(lo, hi, size=2) * cfg.size
            margin = max(ry, rx)
            cy, cx = gen.uniform(margin, cfg.size - margin, size=2)
            ellipses.append(Ellipse(float(cy), float(cx), float(ry), float(rx), float(gen.uniform(0.0, np.pi))))
        mask = np.zeros((cfg.size, cfg.size), dtype=bool)
        for e in ellipses:
            mask |= e.contains(y, x)
        if 1 <= mask.sum() <= cfg.size * cfg.size / 2:
            return ellipses, mask
    raise ConfigurationError(f"could not place blobs covering 1..half of a {cfg.size}x{cfg.size} image")


def _background(cfg: SynthConfig, gen: np.random.Generator) -> np.ndarray:
    base = np.array([0.55, 0.28, 0.22]) + gen.uniform(-0.05, 0.05, size=3)
    grid = max(2, cfg.size // 8)
    coarse = gen.uniform(-1.0, 1.0, size=(3, grid, grid))
    field = resize_bilinear(coarse, cfg.size, cfg.size)
    return base[:, None, None] + cfg.noise_amplitude * field


def synth_sample(cfg: SynthConfig, index: int) -> tuple[Sample, list[Ellipse]]:
    gen = Rng(cfg.seed, "synth", index).generator
    ellipses, mask = _place_ellipses(cfg, gen)
    image = _background(cfg, gen)

    y, x = _pixel_centers(cfg.size)
    for e in ellipses:
        color = np.array([0.88, 0.6, 0.5]) + gen.uniform(-0.06, 0.06, size=3)
        # dome shading plus fine surface texture
        dist = ((y - e.cy) ** 2 + (x - e.cx) ** 2) / max(e.ry, e.rx) ** 2
        shade = 1.0 - 0.2 * np.clip(dist, 0.0, 1.0)
        texture = 0.04 * gen.standard_normal((cfg.size, cfg.size))
        blob = color[:, None, None] * shade[None] + texture[None]
        alpha = _coverage(e, cfg.size)[None]
        image = image * (1.0 - alpha) + blob * alpha

    dtype = get_dtype()
    sample = Sample(f"synth_{index:04d}", np.clip(image, 0.0, 1.0).astype(dtype), mask[None].astype(dtype))
    return sample, ellipses


def generate_synthetic(cfg: SynthConfig) -> Dataset:
    """Dataset of ``cfg.count`` samples, fully determined by ``cfg.seed``"""
    samples, annotations = [], {}
    for i in range(cfg.count):
        sample, ellipses = synth_sample(cfg, i)
        samples.append(sample)
        annotations[sample.id] = ellipses
    logger.info(f"Generated {cfg.count} synthetic samples at {cfg.size}x{cfg.size} (seed {cfg.seed})")
    return Dataset(samples, "synthetic", cfg.size, annotations)
