"""Training recipe: BCE + dice loss, Adam, on-the-fly augmentation, epoch loop and run artifacts"""

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PositiveInt, model_validator
from tqdm import tqdm

from .augment import AugmentationConfig, augment
from .checkpoint import save_checkpoint
from .data import Dataset, stack
from .errors import EmptyDatasetError, NumericError
from .losses import combined_loss, combined_loss_grad
from .model import Network
from .optim import AdamState, adam_step
from .tensor import Rng, Tensor

logger = logging.getLogger(__name__)

LOG_HEADER = ["epoch", "mean_loss", "seconds"]


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    learning_rate: float = Field(default=1e-4, gt=0, alias="lr")
    batch_size: PositiveInt = 8
    epochs: PositiveInt = 30
    seed: int = 0
    w_bce: float = Field(default=1.0, ge=0)
    w_dice: float = Field(default=1.0, ge=0)
    dice_smooth: float = Field(default=1.0, gt=0)
    checkpoint_every: PositiveInt = 10
    augmentation: AugmentationConfig = Field(default_factory=AugmentationConfig)

    @model_validator(mode="after")
    def _some_loss(self):
        if self.w_bce == 0 and self.w_dice == 0:
            raise ValueError("w_bce and w_dice cannot both be zero")
        return self


@dataclass
class EpochStats:
    epoch: int
    mean_loss: float
    batch_losses: list[float]
    seconds: float


@dataclass
class TrainingResult:
    history: list[EpochStats] = field(default_factory=list)
    best_epoch: int = 0
    best_loss: float = float("inf")


def train_step(net: Network, images: Tensor, masks: Tensor, cfg: TrainConfig, adam: AdamState | None) -> float:
    """Forward, loss, backward and (unless ``adam`` is None) one Adam update"""
    pred = net.forward(images, "train")
    loss = combined_loss(pred, masks, cfg)
    if not np.isfinite(loss):
        return loss
    if adam is not None:
        net.backward(combined_loss_grad(pred, masks.astype(pred.dtype), cfg))
        adam_step(net.params, adam, cfg.learning_rate)
    return loss


def train_epoch(net: Network, dataset: Dataset, cfg: TrainConfig, adam: AdamState, rng: Rng, epoch: int = 0, optimize: bool = True, progress: bool = False) -> EpochStats:
    """One pass in a seed+epoch shuffled order; the last partial batch is kept.

    With ``optimize=False`` no gradients are applied (loss-only pass).
    """
    if len(dataset) == 0:
        raise EmptyDatasetError("cannot train on an empty dataset")
    started = time.perf_counter()
    order = Rng(cfg.seed, "shuffle", epoch).generator.permutation(len(dataset))
    batches = [order[i : i + cfg.batch_size] for i in range(0, len(order), cfg.batch_size)]

    losses = []
    for index, batch in enumerate(tqdm(batches, desc=f"epoch {epoch}", leave=False, disable=not progress)):
        samples = [augment(dataset[int(i)], rng, cfg.augmentation) for i in batch]
        images, masks = stack(samples)
        loss = train_step(net, images, masks, cfg, adam if optimize else None)
        if not np.isfinite(loss):
            raise NumericError(f"non-finite loss {loss} at epoch {epoch}, batch {index}")
        losses.append(loss)
        logger.debug(f"epoch {epoch} batch {index}: loss {loss:.6f}")

    return EpochStats(epoch, float(np.mean(losses)), losses, time.perf_counter() - started)


def fit(net: Network, dataset: Dataset, cfg: TrainConfig, run_dir: str | Path, progress: bool = False) -> TrainingResult:
    """Train for ``cfg.epochs`` epochs writing ``log.csv`` and ``checkpoints/`` into ``run_dir``"""
    run_dir = Path(run_dir)
    ckpt_dir = run_dir / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    adam = AdamState()
    rng = Rng(cfg.seed, "augment")
    result = TrainingResult()

    logger.info(f"Training on {len(dataset)} samples for {cfg.epochs} epochs (batch {cfg.batch_size}, lr {cfg.learning_rate})")
    with open(run_dir / "log.csv", "w", newline="") as log_file:
        writer = csv.writer(log_file)
        writer.writerow(LOG_HEADER)
        for epoch in range(1, cfg.epochs + 1):
            stats = train_epoch(net, dataset, cfg, adam, rng, epoch, progress=progress)
            result.history.append(stats)
            writer.writerow([epoch, f"{stats.mean_loss:.8f}", f"{stats.seconds:.3f}"])
            log_file.flush()
            logger.info(f"Epoch {epoch}/{cfg.epochs}: mean loss {stats.mean_loss:.5f} ({stats.seconds:.1f}s)")

            if stats.mean_loss < result.best_loss:
                result.best_loss, result.best_epoch = stats.mean_loss, epoch
                save_checkpoint(net, ckpt_dir / "best.rupn")
            if epoch % cfg.checkpoint_every == 0:
                save_checkpoint(net, ckpt_dir / f"epoch_{epoch}.rupn")

    save_checkpoint(net, ckpt_dir / "final.rupn")
    logger.info(f"Best mean loss {result.best_loss:.5f} at epoch {result.best_epoch}")
    return result
