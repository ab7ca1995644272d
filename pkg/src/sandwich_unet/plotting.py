"""Matplotlib figures written next to the CSV / text reports."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .contour import ContourPolygon, contour_pixels  # noqa: E402

# deterministic PNG bytes: no software / date chunks
_PNG_META = {"Software": None}

STYLE = {
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 120,
}


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    fig.savefig(path, metadata=_PNG_META if path.suffix.lower() == ".png" else None, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_training_curves(history: Sequence, path: str | Path, title: str = "") -> Path:
    """Loss and Dice per epoch, one panel each."""
    epochs = [r.epoch for r in history]
    with plt.rc_context(STYLE):
        fig, (ax_loss, ax_dice) = plt.subplots(1, 2, figsize=(8, 3.2))
        ax_loss.plot(epochs, [r.train_loss for r in history], label="train")
        ax_loss.plot(epochs, [r.val_loss for r in history], label="validation")
        ax_loss.set_xlabel("epoch")
        ax_loss.set_ylabel("Dice loss")
        ax_loss.legend()
        ax_dice.plot(epochs, [r.train_dice for r in history], label="train")
        ax_dice.plot(epochs, [r.val_dice for r in history], label="validation")
        ax_dice.set_xlabel("epoch")
        ax_dice.set_ylabel("Dice coefficient")
        ax_dice.set_ylim(0, 1)
        ax_dice.legend()
        if title:
            fig.suptitle(title)
        return _save(fig, path)


def plot_arelu_parameters(history: Sequence, path: str | Path) -> Path | None:
    """Effective negative slope and positive gain of every AReLU block over training."""
    if not history or not history[0].alphas:
        return None
    epochs = [r.epoch for r in history]
    slopes = np.array([r.effective_slopes for r in history])
    gains = 1.0 + 1.0 / (1.0 + np.exp(-np.array([r.betas for r in history])))
    with plt.rc_context(STYLE):
        fig, (ax_a, ax_b) = plt.subplots(1, 2, figsize=(8, 3.2))
        for i in range(slopes.shape[1]):
            ax_a.plot(epochs, slopes[:, i], label=f"dec{i + 1}")
            ax_b.plot(epochs, gains[:, i], label=f"dec{i + 1}")
        ax_a.set_ylabel("negative slope")
        ax_b.set_ylabel("positive gain")
        for ax in (ax_a, ax_b):
            ax.set_xlabel("epoch")
            ax.legend()
        return _save(fig, path)


def plot_ablation(rows: Sequence, path: str | Path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3.2))
        ks = [r.k for r in rows]
        ax.plot(ks, [100 * r.mean_dice for r in rows], marker="o")
        ax.set_xticks(ks)
        ax.set_xlabel("# AReLU decoder blocks")
        ax.set_ylabel("% Dice score")
        return _save(fig, path)


def plot_sweep(rows: Sequence, path: str | Path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5, 3.2))
        labels = [f"{r.alpha:.2f}/{r.beta:.1f}" for r in rows]
        colors = ["tab:orange" if r.best else "tab:blue" for r in rows]
        ax.bar(labels, [100 * r.mean_dice for r in rows], color=colors)
        ax.set_xlabel("alpha / beta initialisation")
        ax.set_ylabel("% Dice score")
        return _save(fig, path)


def plot_segmentation(
    image: np.ndarray,
    probability: np.ndarray,
    contours: Sequence[ContourPolygon],
    path: str | Path,
    truth: np.ndarray | None = None,
) -> Path:
    """Image, (ground truth), predicted mask and contour overlay side by side."""
    panels = [("image", image, "gray")]
    if truth is not None:
        panels.append(("ground truth", truth, "gray"))
    panels.append(("prediction", probability >= 0.5, "gray"))
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(panels) + 1, figsize=(2.6 * (len(panels) + 1), 2.8))
        for ax, (title, arr, cmap) in zip(axes, panels):
            ax.imshow(arr, cmap=cmap, vmin=0, vmax=1, interpolation="nearest")
            ax.set_title(title)
        rgb = np.repeat(np.clip(image, 0, 1)[:, :, None], 3, axis=2)
        rgb[contour_pixels(contours, image.shape)] = (0.0, 1.0, 0.0)
        axes[-1].imshow(rgb, interpolation="nearest")
        axes[-1].set_title("contours")
        for ax in axes:
            ax.set_axis_off()
        return _save(fig, path)
