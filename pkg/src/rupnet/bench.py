"""Batch-1 inference throughput harness"""

import logging
import os
import platform
import time

import numpy as np
from pydantic import BaseModel
from tqdm import tqdm

from .errors import InvalidArgumentError, InvalidShapeError
from .model import Predictor
from .tensor import Rng

logger = logging.getLogger(__name__)


class FpsStats(BaseModel):
    value: float
    per_frame_ms_mean: float
    per_frame_ms_std: float
    warmup: int
    iters: int
    image_size: int


def hardware_string() -> str:
    """CPU and library description; absolute FPS is only comparable on the same machine"""
    cpu = platform.processor() or platform.machine()
    return f"{platform.system()} {platform.release()} | {cpu} x{os.cpu_count()} | Python {platform.python_version()} | numpy {np.__version__}"


def benchmark_fps(net: Predictor, size: int, warmup: int = 5, iters: int = 100, in_channels: int = 3, seed: int = 0, progress: bool = False) -> FpsStats:
    """Run ``warmup`` untimed then ``iters`` timed forwards on one fixed random input"""
    if iters < 1 or warmup < 0:
        raise InvalidArgumentError(f"need iters >= 1 and warmup >= 0, got iters={iters} warmup={warmup}")
    if size < 8 or size % 8:
        raise InvalidShapeError(f"benchmark size must be a positive multiple of 8, got {size}")

    x = Rng(seed, "bench").generator.random((1, in_channels, size, size)).astype(np.float32)
    for _ in range(warmup):
        net.predict(x)

    frames = np.empty(iters)
    started = time.perf_counter()
    for i in tqdm(range(iters), desc=f"bench {size}x{size}", leave=False, disable=not progress):
        t0 = time.perf_counter()
        net.predict(x)
        frames[i] = time.perf_counter() - t0
    total = time.perf_counter() - started

    stats = FpsStats(
        value=iters / total,
        per_frame_ms_mean=float(frames.mean() * 1000.0),
        per_frame_ms_std=float(frames.std() * 1000.0),
        warmup=warmup,
        iters=iters,
        image_size=size,
    )
    logger.info(f"{size}x{size}: {stats.value:.2f} FPS ({stats.per_frame_ms_mean:.2f} +/- {stats.per_frame_ms_std:.2f} ms/frame)")
    return stats
