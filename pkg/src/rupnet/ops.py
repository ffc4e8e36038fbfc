"""Layer primitives with exact analytic backward passes.

Every forward function returns ``(output, OpRecord)``. The record keeps what
the matching backward needs; ``backward(record, upstream)`` dispatches on
``record.kind`` through the ``BACKWARD`` table and returns
``(input_gradient, parameter_gradients)``.
"""

from collections.abc import Callable
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InvalidArgumentError, InvalidShapeError, ShapeMismatchError
from .tensor import Tensor

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


@dataclass
class OpRecord:
    kind: str
    output_shape: tuple[int, ...]
    saved: dict[str, Any] = field(default_factory=dict)


@dataclass
class BatchNormState:
    """Per-channel affine parameters and inference statistics.

    ``gamma`` and ``beta`` are the same arrays the ParamStore owns, so
    optimizer updates are seen here without copying.
    """

    gamma: Tensor
    beta: Tensor
    running_mean: Tensor
    running_var: Tensor
    momentum: float = BN_MOMENTUM
    eps: float = BN_EPS

    @property
    def channels(self) -> int:
        return self.gamma.shape[0]


def _require_nchw(x: Tensor, what: str):
    if x.ndim != 4:
        raise InvalidShapeError(f"{what} expects an NCHW tensor, got shape {x.shape}")


# Convolution


def _correlate(x: Tensor, w: Tensor, pad: int) -> Tensor:
    k = w.shape[2]
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    cols = sliding_window_view(xp, (k, k), axis=(2, 3))
    out = np.tensordot(cols, w, axes=([1, 4, 5], [1, 2, 3]))
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, pad: int | None = None) -> tuple[Tensor, OpRecord]:
    """Stride-1 same-size convolution with a 1x1 or 3x3 kernel"""
    _require_nchw(x, "conv2d")
    k = w.shape[2]
    if w.ndim != 4 or k not in (1, 3) or w.shape[3] != k:
        raise InvalidArgumentError(f"conv2d supports 1x1 and 3x3 kernels, got weight shape {w.shape}")
    if pad is None:
        pad = k // 2
    if pad != k // 2:
        raise InvalidArgumentError(f"conv2d with {k}x{k} kernel needs pad={k // 2}, got {pad}")
    if x.shape[1] != w.shape[1]:
        raise ShapeMismatchError(f"conv2d input has {x.shape[1]} channels, weight expects {w.shape[1]}")
    if b is not None and b.shape != (w.shape[0],):
        raise ShapeMismatchError(f"conv2d bias shape {b.shape} does not match {w.shape[0]} output channels")

    y = _correlate(x, w, pad)
    if b is not None:
        y += b[None, :, None, None]
    return y, OpRecord("conv2d", y.shape, {"x": x, "w": w, "pad": pad, "has_bias": b is not None})


def conv2d_backward(rec: OpRecord, g: Tensor) -> tuple[Tensor, dict[str, Tensor]]:
    x, w, pad = rec.saved["x"], rec.saved["w"], rec.saved["pad"]
    k = w.shape[2]
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    cols = sliding_window_view(xp, (k, k), axis=(2, 3))
    grads = {"w": np.tensordot(g, cols, axes=([0, 2, 3], [0, 2, 3]))}
    if rec.saved["has_bias"]:
        grads["b"] = g.sum(axis=(0, 2, 3))
    # transposed convolution: flip the kernel and swap its channel axes
    w_t = np.ascontiguousarray(w.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1])
    dx = _correlate(g, w_t, k - 1 - pad)
    return dx, grads


# Batch normalization


def batchnorm(x: Tensor, s: BatchNormState, mode: str = "train", update_stats: bool = True) -> tuple[Tensor, OpRecord]:
    """Per-channel normalization; train mode also updates running statistics"""
    _require_nchw(x, "batchnorm")
    if x.shape[1] != s.channels:
        raise ShapeMismatchError(f"batchnorm got {x.shape[1]} channels, state has {s.channels}")

    if mode == "train":
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        if update_stats:
            s.running_mean *= 1.0 - s.momentum
            s.running_mean += s.momentum * mean.astype(s.running_mean.dtype)
            s.running_var *= 1.0 - s.momentum
            s.running_var += s.momentum * var.astype(s.running_var.dtype)
    elif mode == "infer":
        mean = s.running_mean.astype(x.dtype)
        var = s.running_var.astype(x.dtype)
    else:
        raise InvalidArgumentError(f"unknown batchnorm mode: {mode}")

    inv_std = (1.0 / np.sqrt(var + s.eps)).astype(x.dtype)
    x_hat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
    y = s.gamma[None, :, None, None] * x_hat + s.beta[None, :, None, None]
    return y, OpRecord("batchnorm", y.shape, {"x_hat": x_hat, "inv_std": inv_std, "gamma": s.gamma, "mode": mode})


def batchnorm_backward(rec: OpRecord, g: Tensor) -> tuple[Tensor, dict[str, Tensor]]:
    x_hat, inv_std, gamma = rec.saved["x_hat"], rec.saved["inv_std"], rec.saved["gamma"]
    grads = {"gamma": (g * x_hat).sum(axis=(0, 2, 3)), "beta": g.sum(axis=(0, 2, 3))}
    dx_hat = g * gamma[None, :, None, None]
    scale = inv_std[None, :, None, None]
    if rec.saved["mode"] == "infer":
        return dx_hat * scale, grads

    count = g.shape[0] * g.shape[2] * g.shape[3]
    sum_dx_hat = dx_hat.sum(axis=(0, 2, 3), keepdims=True)
    sum_dx_hat_x_hat = (dx_hat * x_hat).sum(axis=(0, 2, 3), keepdims=True)
    dx = scale / count * (count * dx_hat - sum_dx_hat - x_hat * sum_dx_hat_x_hat)
    return dx, grads


# Activations


def relu(x: Tensor) -> tuple[Tensor, OpRecord]:
    mask = x > 0
    y = np.where(mask, x, 0).astype(x.dtype)
    return y, OpRecord("relu", y.shape, {"mask": mask})


def relu_backward(rec: OpRecord, g: Tensor) -> tuple[Tensor, dict[str, Tensor]]:
    return np.where(rec.saved["mask"], g, 0).astype(g.dtype), {}


def sigmoid(x: Tensor) -> tuple[Tensor, OpRecord]:
    """Overflow-free logistic function, clipped to the open interval (0, 1)"""
    e = np.exp(-np.abs(x))
    y = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype)
    info = np.finfo(x.dtype)
    np.clip(y, info.tiny, 1.0 - info.epsneg, out=y)
    return y, OpRecord("sigmoid", y.shape, {"y": y})


def sigmoid_backward(rec: OpRecord, g: Tensor) -> tuple[Tensor, dict[str, Tensor]]:
    y = rec.saved["y"]
    return g * y * (1.0 - y), {}


# Pooling


def maxpool2x2(x: Tensor) -> tuple[Tensor, OpRecord]:
    """Non-overlapping 2x2 max pooling.

    Ties resolve to the first element in row-major window order.
    ``record.saved["indices"]`` holds the flat H*W position of each max.
    """
    _require_nchw(x, "maxpool2x2")
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise InvalidShapeError(f"maxpool2x2 needs even height and width, got {h}x{w}")
    windows = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    local = windows.argmax(axis=-1)
    y = np.take_along_axis(windows, local[..., None], axis=-1)[..., 0]

    rows = 2 * np.arange(h // 2)[:, None] + local // 2
    cols = 2 * np.arange(w // 2)[None, :] + local % 2
    indices = rows * w + cols
    return np.ascontiguousarray(y), OpRecord("maxpool2x2", y.shape, {"local": local, "input_shape": x.shape, "indices": indices})


def maxpool2x2_backward(rec: OpRecord, g: Tensor) -> tuple[Tensor, dict[str, Tensor]]:
    n, c, h, w = rec.saved["input_shape"]
    scattered = np.zeros((n, c, h // 2, w // 2, 4), dtype=g.dtype)
    np.put_along_axis(scattered, rec.saved["local"][..., None], g[..., None], axis=-1)
    dx = scattered.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
    return np.ascontiguousarray(dx), {}


# Bilinear interpolation


def interpolation_matrix(src: int, dst: int, dtype=np.float64) -> np.ndarray:
    """Rows of half-pixel-center bilinear weights mapping ``src`` samples to ``dst``.

    Source coordinate ``s = (d + 0.5) * src / dst - 0.5`` is clamped to
    ``[0, src - 1]``; each row holds at most two non-zero weights summing to 1.
    """
    s = (np.arange(dst) + 0.5) * (src / dst) - 0.5
    s = np.clip(s, 0.0, src - 1)
    lo = np.floor(s).astype(int)
    hi = np.minimum(lo + 1, src - 1)
    frac = s - lo
    matrix = np.zeros((dst, src), dtype=np.float64)
    rows = np.arange(dst)
    np.add.at(matrix, (rows, lo), 1.0 - frac)
    np.add.at(matrix, (rows, hi), frac)
    return matrix.astype(dtype)


def bilinear_upsample(x: Tensor, factor: int) -> tuple[Tensor, OpRecord]:
    """Bilinear upsampling by 2 or 4 with half-pixel centers and edge clamping"""
    _require_nchw(x, "bilinear_upsample")
    if factor not in (2, 4):
        raise InvalidArgumentError(f"bilinear_upsample supports factors 2 and 4, got {factor}")
    _, _, h, w = x.shape
    rows = interpolation_matrix(h, factor * h, x.dtype)
    cols = interpolation_matrix(w, factor * w, x.dtype)
    y = rows @ x @ cols.T
    return y, OpRecord("bilinear_upsample", y.shape, {"rows": rows, "cols": cols})


def bilinear_upsample_backward(rec: OpRecord, g: Tensor) -> tuple[Tensor, dict[str, Tensor]]:
    # transpose of the interpolation weights scatters each gradient back to its texels
    return rec.saved["rows"].T @ g @ rec.saved["cols"], {}


BACKWARD: dict[str, Callable[[OpRecord, Tensor], tuple[Tensor, dict[str, Tensor]]]] = {
    "conv2d": conv2d_backward,
    "batchnorm": batchnorm_backward,
    "relu": relu_backward,
    "sigmoid": sigmoid_backward,
    "maxpool2x2": maxpool2x2_backward,
    "bilinear_upsample": bilinear_upsample_backward,
}


def backward(rec: OpRecord, upstream: Tensor) -> tuple[Tensor, dict[str, Tensor]]:
    """Gradient of a recorded forward op w.r.t. its input and parameters"""
    if upstream.shape != rec.output_shape:
        raise ShapeMismatchError(f"{rec.kind} backward: upstream {upstream.shape} vs output {rec.output_shape}")
    try:
        rule = BACKWARD[rec.kind]
    except KeyError:
        raise InvalidArgumentError(f"no backward rule for {rec.kind}") from None
    return rule(rec, upstream)
