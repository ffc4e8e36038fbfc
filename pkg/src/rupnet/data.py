"""Samples, datasets, directory loading, resizing and seeded train/test splits.

Expected layout::

    <root>/images/<stem>.(ppm|pgm)
    <root>/masks/<stem>.(ppm|pgm)
"""

import logging
from collections.abc import Iterator
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .errors import EmptyDatasetError, InvalidArgumentError, InvalidShapeError, PairingError
from .netpbm import read_image
from .ops import interpolation_matrix
from .tensor import Rng, Tensor

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".ppm", ".pgm")
MASK_THRESHOLD = 128 / 255


@dataclass(frozen=True)
class Sample:
    """Image 3 x H x W in [0, 1] and binary mask 1 x H x W"""

    id: str
    image: Tensor
    mask: Tensor

    def __post_init__(self):
        if self.image.ndim != 3 or self.mask.ndim != 3 or self.mask.shape[0] != 1:
            raise InvalidShapeError(f"sample {self.id}: expected C x H x W image and 1 x H x W mask, got {self.image.shape} and {self.mask.shape}")
        if self.image.shape[1:] != self.mask.shape[1:]:
            raise InvalidShapeError(f"sample {self.id}: image {self.image.shape} and mask {self.mask.shape} differ in size")


@dataclass
class Dataset:
    samples: list[Sample]
    provenance: str = "real"
    size: int = 0
    annotations: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        ids = [s.id for s in self.samples]
        if len(set(ids)) != len(ids):
            raise InvalidArgumentError("dataset sample ids must be unique")
        shapes = {s.image.shape[1:] for s in self.samples}
        if len(shapes) > 1:
            raise InvalidShapeError(f"dataset samples differ in size: {sorted(shapes)}")

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self) -> Iterator[Sample]:
        return iter(self.samples)

    def __getitem__(self, index: int) -> Sample:
        return self.samples[index]

    @property
    def ids(self) -> list[str]:
        return [s.id for s in self.samples]

    def subset(self, indices) -> "Dataset":
        chosen = [self.samples[i] for i in indices]
        notes = {s.id: self.annotations[s.id] for s in chosen if s.id in self.annotations}
        return Dataset(chosen, self.provenance, self.size, notes)


def stack(samples: list[Sample]) -> tuple[Tensor, Tensor]:
    """Batch tensors N x 3 x H x W and N x 1 x H x W"""
    return np.stack([s.image for s in samples]), np.stack([s.mask for s in samples])


# Resizing


def resize_bilinear(t: Tensor, height: int, width: int) -> Tensor:
    """Half-pixel-center bilinear resize of a C x H x W (or N x C x H x W) tensor"""
    if t.shape[-2:] == (height, width):
        return t.copy()
    rows = interpolation_matrix(t.shape[-2], height, t.dtype)
    cols = interpolation_matrix(t.shape[-1], width, t.dtype)
    return np.ascontiguousarray(rows @ t @ cols.T)


def resize_nearest(t: Tensor, height: int, width: int) -> Tensor:
    src_h, src_w = t.shape[-2:]
    rows = np.minimum(((np.arange(height) + 0.5) * src_h / height).astype(int), src_h - 1)
    cols = np.minimum(((np.arange(width) + 0.5) * src_w / width).astype(int), src_w - 1)
    return np.ascontiguousarray(t[..., rows[:, None], cols[None, :]])


def prepare_image(image: Tensor, size: int) -> Tensor:
    if image.shape[0] == 1:
        image = np.repeat(image, 3, axis=0)
    elif image.shape[0] != 3:
        raise InvalidArgumentError(f"images need 1 or 3 channels, got {image.shape[0]}")
    return np.clip(resize_bilinear(image, size, size), 0.0, 1.0)


def prepare_mask(mask: Tensor, size: int) -> Tensor:
    # colour masks count a pixel as foreground if any channel is bright
    gray = mask.max(axis=0, keepdims=True)
    resized = resize_nearest(gray, size, size)
    return (resized >= MASK_THRESHOLD - 1e-6).astype(mask.dtype)


# Loading and splitting


def _stems(directory: Path) -> dict[str, Path]:
    if not directory.is_dir():
        raise EmptyDatasetError(f"directory not found: {directory}")
    return {p.stem: p for p in sorted(directory.iterdir()) if p.suffix.lower() in IMAGE_SUFFIXES}


def load_dataset(root: str | Path, size: int) -> Dataset:
    """Load ``images/`` + ``masks/`` pairs, resized to ``size`` x ``size``, sorted by stem"""
    if size < 8 or size % 8:
        raise InvalidShapeError(f"dataset size must be a positive multiple of 8, got {size}")
    root = Path(root)
    images = _stems(root / "images")
    masks = _stems(root / "masks")
    if not images and not masks:
        raise EmptyDatasetError(f"no netpbm images found under {root}")
    for stem in sorted(images.keys() ^ masks.keys()):
        side = "image without mask" if stem in images else "mask without image"
        raise PairingError(side, stem)

    samples = []
    for stem in sorted(images):
        image = prepare_image(read_image(images[stem]), size)
        mask = prepare_mask(read_image(masks[stem]), size)
        samples.append(Sample(stem, image, mask))
    logger.info(f"Loaded {len(samples)} samples from {root} at {size}x{size}")
    return Dataset(samples, "real", size)


def split_dataset(dataset: Dataset, train_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Seeded shuffle, then the first round(fraction * n) samples train and the rest test"""
    if not 0.0 < train_fraction < 1.0:
        raise InvalidArgumentError(f"train_fraction must be in (0, 1), got {train_fraction}")
    n = len(dataset)
    n_train = int(np.floor(train_fraction * n + 0.5))
    if n_train == 0 or n_train == n:
        raise EmptyDatasetError(f"split of {n} samples at {train_fraction} leaves one side empty")
    order = Rng(seed, "split").generator.permutation(n)
    train, test = dataset.subset(sorted(order[:n_train])), dataset.subset(sorted(order[n_train:]))
    logger.info(f"Split {n} samples into {len(train)} train / {len(test)} test")
    return train, test
