"""Dice loss, Adam, early stopping and the epoch loop."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import AugmentationConfig, Sample, augment, sample_rng
from .errors import NumericalError, ShapeError
from .model import Model, forward
from .nn import CLAMP_HI, CLAMP_LO
from .tensor import Tensor, backward, mul, no_grad, sub, tsum

logger = logging.getLogger(__name__)

DICE_EPS = 1.0
THRESHOLD = 0.5


def dice_coefficient(pred, target, threshold: float = THRESHOLD, eps: float = DICE_EPS) -> float:
    """Smoothed hard Dice of ``pred >= threshold`` against a binary target."""
    pred = np.asarray(pred.data if isinstance(pred, Tensor) else pred)
    target = np.asarray(target.data if isinstance(target, Tensor) else target)
    if pred.shape != target.shape:
        raise ShapeError(f"dice_coefficient shape mismatch {pred.shape} vs {target.shape}")
    p = pred >= threshold
    t = target > 0.5
    inter = np.count_nonzero(p & t)
    return (2.0 * inter + eps) / (np.count_nonzero(p) + np.count_nonzero(t) + eps)


def dice_loss(pred: Tensor, target: Tensor | np.ndarray, eps: float = DICE_EPS) -> Tensor:
    """``1 - (2 sum(p t) + eps) / (sum(p) + sum(t) + eps)`` on soft predictions."""
    if not isinstance(target, Tensor):
        target = Tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"dice_loss shape mismatch {pred.shape} vs {target.shape}")
    numer = mul(tsum(mul(pred, target)), 2.0) + eps
    denom = tsum(pred) + (float(target.data.sum()) + eps)
    return sub(1.0, numer / denom)


def soft_dice(pred: np.ndarray, target: np.ndarray, eps: float = DICE_EPS) -> float:
    return (2.0 * float((pred * target).sum()) + eps) / (float(pred.sum()) + float(target.sum()) + eps)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    lr: float = 1e-3
    b1: float = 0.9
    b2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, Tensor], state: AdamState) -> None:
    """One bias-corrected Adam update in place; gradients are cleared afterwards."""
    for name, p in params.items():
        if p.requires_grad and p.grad is None:
            raise ValueError(f"parameter {name!r} has no gradient")
    state.t += 1
    c1 = 1.0 - state.b1**state.t
    c2 = 1.0 - state.b2**state.t
    for name, p in params.items():
        if not p.requires_grad:
            continue
        g = p.grad
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= state.b1
        m += (1.0 - state.b1) * g
        v *= state.b2
        v += (1.0 - state.b2) * (g * g)
        p.data = p.data - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.grad = None


# ---------------------------------------------------------------------------
# early stopping
# ---------------------------------------------------------------------------


@dataclass
class EarlyStopState:
    patience: int = 20
    min_delta: float = 1e-4
    best_val_loss: float = math.inf
    best_epoch: int = 0
    epochs_since_improvement: int = 0
    snapshot: dict[str, np.ndarray] | None = None
    stopped: bool = False


def early_stop_update(state: EarlyStopState, epoch: int, val_loss: float, model: Model | None = None) -> str:
    """Record ``val_loss`` for ``epoch``; returns ``"continue"`` or ``"stop"``.

    An improvement needs ``val_loss < best - min_delta``; it resets the counter
    and snapshots ``model``.  Training stops once ``patience`` epochs in a row
    fail to improve, and the snapshot is restored into ``model``.
    """
    if not math.isfinite(val_loss):
        raise NumericalError(f"validation loss is not finite at epoch {epoch}: {val_loss}")
    if val_loss < state.best_val_loss - state.min_delta:
        state.best_val_loss = val_loss
        state.best_epoch = epoch
        state.epochs_since_improvement = 0
        if model is not None:
            state.snapshot = model.state_dict()
        return "continue"
    state.epochs_since_improvement += 1
    if state.epochs_since_improvement >= state.patience:
        state.stopped = True
        if model is not None and state.snapshot is not None:
            model.load_state_dict(state.snapshot)
        return "stop"
    return "continue"


# ---------------------------------------------------------------------------
# epoch loop
# ---------------------------------------------------------------------------


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 2
    lr: float = 1e-3
    patience: int = 20
    min_delta: float = 1e-4
    seed: int = 0
    # None trains on the raw samples
    augmentation: AugmentationConfig | None = None


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_dice: float
    train_dice: float
    alphas: list[float]
    betas: list[float]

    @property
    def train_soft_dice(self) -> float:
        return 1.0 - self.train_loss

    @property
    def effective_slopes(self) -> list[float]:
        return [min(max(a, CLAMP_LO), CLAMP_HI) for a in self.alphas]


@dataclass
class TrainResult:
    model: Model
    history: list[EpochRecord]
    early_stop: EarlyStopState

    @property
    def best_epoch(self) -> int:
        return self.early_stop.best_epoch


def image_tensor(sample: Sample) -> Tensor:
    return Tensor._wrap(sample.image[None].astype(np.float64))


def mask_tensor(sample: Sample) -> Tensor:
    return Tensor._wrap(sample.mask[None].astype(np.float64))


def predict(model: Model, image: np.ndarray) -> np.ndarray:
    with no_grad():
        return forward(model, Tensor._wrap(np.asarray(image, dtype=np.float64)[None])).data[0]


def validate(model: Model, samples: Sequence[Sample]) -> tuple[float, float]:
    """Mean soft Dice loss and mean per-image hard Dice."""
    losses, dices = [], []
    with no_grad():
        for s in samples:
            pred = forward(model, image_tensor(s))
            losses.append(dice_loss(pred, mask_tensor(s)).item())
            dices.append(dice_coefficient(pred.data[0], s.mask))
    return float(np.mean(losses)), float(np.mean(dices))


def train(
    model: Model,
    train_set: Sequence[Sample],
    val_set: Sequence[Sample],
    config: TrainConfig = TrainConfig(),
    on_epoch=None,
) -> TrainResult:
    """Mini-batch Adam on the Dice loss with early stopping on validation loss.

    The returned model carries the best-validation weights.  ``on_epoch`` (if
    given) is called with each :class:`EpochRecord`.
    """
    if not train_set or not val_set:
        raise ValueError("train and validation sets must be non-empty")
    if config.batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    adam = AdamState(lr=config.lr)
    stopper = EarlyStopState(patience=config.patience, min_delta=config.min_delta)
    history: list[EpochRecord] = []
    n = len(train_set)

    for epoch in range(1, config.epochs + 1):
        order = sample_rng(config.seed, "shuffle", epoch).permutation(n)
        batch_losses, batch_sizes, train_dices = [], [], []
        for start in range(0, n, config.batch_size):
            batch = [train_set[i] for i in order[start : start + config.batch_size]]
            if config.augmentation is not None:
                aug_seed = int(sample_rng(config.seed, "augment", epoch).integers(2**31))
                batch = [augment(s, config.augmentation, aug_seed) for s in batch]
            total = None
            for s in batch:
                pred = forward(model, image_tensor(s))
                loss = dice_loss(pred, mask_tensor(s))
                train_dices.append(dice_coefficient(pred.data[0], s.mask))
                total = loss if total is None else total + loss
            loss = total / float(len(batch))
            value = loss.item()
            if not math.isfinite(value):
                raise NumericalError(f"training loss is not finite at epoch {epoch}")
            backward(loss)
            adam_step(model.params, adam)
            batch_losses.append(value)
            batch_sizes.append(len(batch))

        train_loss = float(np.average(batch_losses, weights=batch_sizes))
        val_loss, val_dice = validate(model, val_set)
        arelus = model.arelu_params()
        record = EpochRecord(
            epoch,
            train_loss,
            val_loss,
            val_dice,
            float(np.mean(train_dices)),
            [p.alpha.item() for p in arelus],
            [p.beta.item() for p in arelus],
        )
        history.append(record)
        logger.info("epoch %d train_loss %.4f val_loss %.4f val_dice %.4f", epoch, train_loss, val_loss, val_dice)
        if on_epoch is not None:
            on_epoch(record)
        model.epoch = epoch
        decision = early_stop_update(stopper, epoch, val_loss, model)
        if decision == "stop":
            break

    if not stopper.stopped and stopper.snapshot is not None:
        model.load_state_dict(stopper.snapshot)
    model.epoch = stopper.best_epoch
    model.best_val_loss = stopper.best_val_loss
    return TrainResult(model, history, stopper)


def metrics_header(arelu_count: int) -> list[str]:
    head = ["epoch", "train_loss", "val_loss", "val_dice"]
    head += [f"alpha_{i + 1}" for i in range(arelu_count)]
    head += [f"beta_{i + 1}" for i in range(arelu_count)]
    head += ["train_dice", "train_soft_dice"]
    head += [f"slope_{i + 1}" for i in range(arelu_count)]
    return head


def write_metrics_csv(history: Sequence[EpochRecord], arelu_count: int, path: str | Path) -> None:
    """Per-epoch log; the leading columns follow the documented metrics layout."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(metrics_header(arelu_count))
        for r in history:
            writer.writerow(
                [r.epoch, repr(r.train_loss), repr(r.val_loss), repr(r.val_dice)]
                + [repr(a) for a in r.alphas]
                + [repr(b) for b in r.betas]
                + [repr(r.train_dice), repr(r.train_soft_dice)]
                + [repr(s) for s in r.effective_slopes]
            )


def read_metrics_csv(path: str | Path) -> list[dict[str, float]]:
    with open(path, newline="") as fh:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(fh)]
