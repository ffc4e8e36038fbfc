"""Binary cross-entropy and soft dice on probability masks, with gradients w.r.t. the prediction"""

from typing import Protocol

import numpy as np

from .errors import ShapeMismatchError
from .tensor import Tensor

PROB_EPS = 1e-7


class LossWeights(Protocol):
    w_bce: float
    w_dice: float
    dice_smooth: float


def _check(pred: Tensor, target: Tensor):
    if pred.shape != target.shape:
        raise ShapeMismatchError(f"prediction {pred.shape} vs target {target.shape}")


def _per_image(t: Tensor) -> np.ndarray:
    # a 4-D tensor is a batch; anything smaller is one image
    t = np.asarray(t, dtype=np.float64)
    return t.reshape(t.shape[0], -1) if t.ndim == 4 else t.reshape(1, -1)


def bce_loss(pred: Tensor, target: Tensor) -> float:
    """Mean binary cross-entropy; predictions are clamped to [1e-7, 1 - 1e-7]"""
    _check(pred, target)
    p = np.clip(np.asarray(pred, dtype=np.float64), PROB_EPS, 1.0 - PROB_EPS)
    t = np.asarray(target, dtype=np.float64)
    return float(np.mean(-(t * np.log(p) + (1.0 - t) * np.log1p(-p))))


def bce_loss_grad(pred: Tensor, target: Tensor) -> Tensor:
    # the clamp is treated as pass-through so saturated wrong pixels still get a gradient
    _check(pred, target)
    p = np.clip(np.asarray(pred, dtype=np.float64), PROB_EPS, 1.0 - PROB_EPS)
    grad = (p - target) / (p * (1.0 - p)) / p.size
    return grad.astype(pred.dtype)


def dice_loss(pred: Tensor, target: Tensor, smooth: float = 1.0) -> float:
    """1 - (2*sum(p*t) + smooth) / (sum(p) + sum(t) + smooth), averaged over images"""
    _check(pred, target)
    p, t = _per_image(pred), _per_image(target)
    score = (2.0 * (p * t).sum(axis=1) + smooth) / (p.sum(axis=1) + t.sum(axis=1) + smooth)
    return float(np.mean(1.0 - score))


def dice_loss_grad(pred: Tensor, target: Tensor, smooth: float = 1.0) -> Tensor:
    _check(pred, target)
    p, t = _per_image(pred), _per_image(target)
    numer = (2.0 * (p * t).sum(axis=1) + smooth)[:, None]
    denom = (p.sum(axis=1) + t.sum(axis=1) + smooth)[:, None]
    grad = -(2.0 * t * denom - numer) / denom**2 / p.shape[0]
    return grad.reshape(pred.shape).astype(pred.dtype)


def combined_loss(pred: Tensor, target: Tensor, cfg: LossWeights) -> float:
    total = 0.0
    if cfg.w_bce:
        total += cfg.w_bce * bce_loss(pred, target)
    if cfg.w_dice:
        total += cfg.w_dice * dice_loss(pred, target, cfg.dice_smooth)
    return total


def combined_loss_grad(pred: Tensor, target: Tensor, cfg: LossWeights) -> Tensor:
    grad = np.zeros_like(pred)
    if cfg.w_bce:
        grad += cfg.w_bce * bce_loss_grad(pred, target)
    if cfg.w_dice:
        grad += cfg.w_dice * dice_loss_grad(pred, target, cfg.dice_smooth)
    return grad
