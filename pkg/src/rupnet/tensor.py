"""Dense NCHW tensors and seeded random streams.

Tensors are plain C-contiguous numpy arrays. The helpers here validate
shapes and always return fresh arrays, so results can be shared read-only
between threads.
"""

from collections.abc import Sequence
from contextlib import contextmanager

import numpy as np

from .errors import InvalidArgumentError, InvalidShapeError, NumericError, ShapeMismatchError

Tensor = np.ndarray

_dtype: type = np.float32

# Fixed spawn keys so that adding draws to one stream never shifts another
STREAMS = {
    "init": 0,
    "augment": 1,
    "shuffle": 2,
    "split": 3,
    "synth": 4,
    "bench": 5,
    "gradcheck": 6,
}


def get_dtype() -> type:
    """Float type used for new tensors (float32 unless inside float64_mode)"""
    return _dtype


@contextmanager
def float64_mode():
    """Temporarily switch new tensors to 64-bit floats (gradient checking)"""
    global _dtype
    previous = _dtype
    _dtype = np.float64
    try:
        yield
    finally:
        _dtype = previous


def _check_shape(shape: Sequence[int]) -> tuple[int, ...]:
    dims = tuple(int(d) for d in shape)
    if not 1 <= len(dims) <= 4:
        raise InvalidShapeError(f"rank must be 1-4, got shape {dims}")
    if any(d < 1 for d in dims):
        raise InvalidShapeError(f"all dims must be >= 1, got shape {dims}")
    return dims


def tensor_create(shape: Sequence[int], fill: float = 0.0) -> Tensor:
    """Tensor of the given shape with every element set to ``fill``"""
    return np.full(_check_shape(shape), fill, dtype=_dtype)


def elementwise(a: Tensor, b: Tensor, op: str) -> Tensor:
    """Elementwise ``add`` or ``mul`` of two same-shaped tensors"""
    if a.shape != b.shape:
        raise ShapeMismatchError(f"elementwise {op}: {a.shape} vs {b.shape}")
    if op == "add":
        return np.add(a, b)
    if op == "mul":
        return np.multiply(a, b)
    raise InvalidArgumentError(f"unknown elementwise op: {op}")


def concat_channels(inputs: Sequence[Tensor]) -> Tensor:
    """Concatenate NCHW tensors along the channel axis, in input order"""
    if not inputs:
        raise InvalidArgumentError("concat_channels needs at least one input")
    first = inputs[0]
    if first.ndim != 4:
        raise InvalidShapeError(f"concat_channels expects NCHW tensors, got {first.shape}")
    n, _, h, w = first.shape
    for t in inputs[1:]:
        if t.ndim != 4 or (t.shape[0], t.shape[2], t.shape[3]) != (n, h, w):
            raise ShapeMismatchError(f"concat_channels: {first.shape} vs {t.shape}")
    return np.concatenate(inputs, axis=1)


def split_channels(t: Tensor, sizes: Sequence[int]) -> list[Tensor]:
    """Split an NCHW tensor into consecutive channel groups of the given sizes"""
    if sum(sizes) != t.shape[1] or any(s < 1 for s in sizes):
        raise ShapeMismatchError(f"cannot split {t.shape[1]} channels into {list(sizes)}")
    bounds = np.cumsum(sizes)[:-1]
    return [np.ascontiguousarray(part) for part in np.split(t, bounds, axis=1)]


def ensure_finite(t: Tensor, what: str) -> Tensor:
    if not np.all(np.isfinite(t)):
        raise NumericError(f"non-finite values in {what}")
    return t


class Rng:
    """Seeded PCG64 stream; one owner at a time"""

    def __init__(self, seed: int, stream: str = "init", *subkeys: int):
        if stream not in STREAMS:
            raise InvalidArgumentError(f"unknown rng stream: {stream}")
        self.seed = int(seed)
        self.stream = stream
        seq = np.random.SeedSequence(self.seed, spawn_key=(STREAMS[stream], *subkeys))
        self.generator = np.random.Generator(np.random.PCG64(seq))

    def __repr__(self):
        return f"Rng(seed={self.seed}, stream={self.stream!r})"


def rng_normal(rng: Rng, shape: Sequence[int], mean: float = 0.0, std: float = 1.0) -> Tensor:
    """I.i.d. normal draws; advances ``rng`` deterministically"""
    if std < 0:
        raise InvalidArgumentError(f"std must be >= 0, got {std}")
    dims = _check_shape(shape)
    draws = rng.generator.standard_normal(dims)
    return (mean + std * draws).astype(_dtype)
