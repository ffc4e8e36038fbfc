"""On-the-fly flips, right-angle rotations and brightness scaling"""

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .data import Sample
from .errors import InvalidShapeError
from .tensor import Rng


class AugmentationConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    enabled: bool = True
    hflip_prob: float = Field(default=0.5, ge=0, le=1)
    vflip_prob: float = Field(default=0.5, ge=0, le=1)
    rotation_set: tuple[int, ...] = Field(default=(0, 90, 180, 270), description="Right-angle rotations drawn uniformly")
    brightness_range: tuple[float, float] = Field(default=(0.8, 1.2), description="Multiplicative image brightness range")

    @model_validator(mode="after")
    def _check(self):
        if not self.rotation_set or any(r not in (0, 90, 180, 270) for r in self.rotation_set):
            raise ValueError(f"rotation_set must be a non-empty subset of 0/90/180/270, got {self.rotation_set}")
        lo, hi = self.brightness_range
        if not 0 < lo <= hi:
            raise ValueError(f"brightness_range must satisfy 0 < lo <= hi, got {self.brightness_range}")
        return self


def hflip(sample: Sample) -> Sample:
    return Sample(sample.id, sample.image[:, :, ::-1].copy(), sample.mask[:, :, ::-1].copy())


def vflip(sample: Sample) -> Sample:
    return Sample(sample.id, sample.image[:, ::-1, :].copy(), sample.mask[:, ::-1, :].copy())


def rotate(sample: Sample, degrees: int) -> Sample:
    k = (degrees // 90) % 4
    return Sample(sample.id, np.rot90(sample.image, k, axes=(1, 2)).copy(), np.rot90(sample.mask, k, axes=(1, 2)).copy())


def adjust_brightness(sample: Sample, factor: float) -> Sample:
    """Scale the image only, clamped to [0, 1]; the mask is untouched"""
    image = np.clip(sample.image * factor, 0.0, 1.0).astype(sample.image.dtype)
    return Sample(sample.id, image, sample.mask)


def augment(sample: Sample, rng: Rng, cfg: AugmentationConfig) -> Sample:
    """Same geometric transform on image and mask, brightness on the image.

    Four draws are consumed per call whatever the outcome, so the stream
    position depends only on how many samples were augmented.
    """
    if not cfg.enabled:
        return sample
    _, h, w = sample.image.shape
    if h != w and any(d in (90, 270) for d in cfg.rotation_set):
        raise InvalidShapeError(f"sample {sample.id} is {h}x{w}; quarter-turn rotations need square samples")
    gen = rng.generator
    do_hflip = gen.random() < cfg.hflip_prob
    do_vflip = gen.random() < cfg.vflip_prob
    degrees = cfg.rotation_set[int(gen.integers(len(cfg.rotation_set)))]
    factor = float(gen.uniform(*cfg.brightness_range))

    if do_hflip:
        sample = hflip(sample)
    if do_vflip:
        sample = vflip(sample)
    if degrees:
        sample = rotate(sample, degrees)
    if factor != 1.0:
        sample = adjust_brightness(sample, factor)
    return sample
