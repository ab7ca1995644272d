"""Test-set scoring, AReLU-count ablation and alpha/beta initialisation sweep."""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .data import Sample
from .errors import DataError, ShapeError
from .model import DIVISOR, Model, UNetConfig, build
from .stats import TTestResult, format_p
from .train import TrainConfig, dice_coefficient, predict, train

DEFAULT_GRID: tuple[tuple[float, float], ...] = (
    (0.75, 1.5),
    (0.75, 2.0),
    (0.90, 0.9),
    (0.99, 1.5),
    (0.99, 2.0),
)


def format_percent(score: float) -> str:
    """0.8358 -> '83.58'."""
    return f"{100.0 * score:.2f}"


@dataclass
class ScoreVector:
    tag: str
    ids: list[str]
    scores: list[float]

    def __post_init__(self):
        if len(self.ids) != len(self.scores):
            raise ValueError("ids and scores differ in length")
        order = sorted(range(len(self.ids)), key=lambda i: self.ids[i])
        self.ids = [self.ids[i] for i in order]
        self.scores = [float(self.scores[i]) for i in order]

    @property
    def mean(self) -> float:
        return float(np.mean(self.scores))

    @property
    def mean_percent(self) -> str:
        return format_percent(self.mean)

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["id", "dice"])
            for i, s in zip(self.ids, self.scores):
                w.writerow([i, repr(s)])

    @classmethod
    def read_csv(cls, path: str | Path, tag: str | None = None) -> "ScoreVector":
        path = Path(path)
        if not path.exists():
            raise DataError(f"score file not found: {path}")
        try:
            with open(path, newline="") as fh:
                rows = list(csv.DictReader(fh))
            ids = [r["id"] for r in rows]
            scores = [float(r["dice"]) for r in rows]
        except (KeyError, ValueError) as exc:
            raise DataError(f"{path}: malformed score file ({exc})") from exc
        return cls(tag or path.stem, ids, scores)


def aligned_scores(a: ScoreVector, b: ScoreVector) -> tuple[list[float], list[float]]:
    if a.ids != b.ids:
        raise DataError(f"score vectors {a.tag!r} and {b.tag!r} cover different samples")
    return a.scores, b.scores


def evaluate(model: Model, test_set: Sequence[Sample], tag: str = "model") -> ScoreVector:
    """Per-image hard Dice on un-augmented samples, ordered by sample id."""
    if not test_set:
        raise ValueError("test set is empty")
    ids, scores = [], []
    for s in test_set:
        h, w = s.image.shape
        if h % DIVISOR or w % DIVISOR:
            raise ShapeError(f"sample {s.id} is {h}x{w}; model needs multiples of {DIVISOR}")
        scores.append(dice_coefficient(predict(model, s.image), s.mask))
        ids.append(s.id)
    return ScoreVector(tag, ids, scores)


def evaluate_masks(predictions: dict[str, np.ndarray], test_set: Sequence[Sample], tag: str = "masks") -> ScoreVector:
    """Score precomputed probability maps (or binary masks) keyed by sample id."""
    return ScoreVector(tag, [s.id for s in test_set], [dice_coefficient(predictions[s.id], s.mask) for s in test_set])


# ---------------------------------------------------------------------------
# harnesses
# ---------------------------------------------------------------------------


@dataclass
class AblationRow:
    k: int
    mean_dice: float
    label: str
    best_epoch: int
    scores: ScoreVector


@dataclass
class SweepRow:
    alpha: float
    beta: float
    mean_dice: float
    best_epoch: int
    scores: ScoreVector
    best: bool = False


def _train_and_score(config: UNetConfig, train_set, val_set, test_set, train_config: TrainConfig, init_seed: int, tag: str):
    model = build(config, seed=init_seed)
    result = train(model, train_set, val_set, train_config)
    return evaluate(result.model, test_set, tag), result


def ablate_arelu(
    base_config: UNetConfig,
    train_set: Sequence[Sample],
    val_set: Sequence[Sample],
    test_set: Sequence[Sample],
    train_config: TrainConfig,
    k_values: Sequence[int] = range(6),
    seed: int = 0,
    progress: Callable[[str], None] | None = None,
) -> list[AblationRow]:
    """One model per AReLU count, sharing data split, init seed and training seed."""
    rows = []
    for k in sorted(k_values):
        cfg = replace(base_config, arelu_count=k)
        if progress:
            progress(f"training k={k}")
        scores, result = _train_and_score(cfg, train_set, val_set, test_set, train_config, seed, f"k={k}")
        label = "baseline U-Net" if k == 0 else f"{k} AReLU"
        rows.append(AblationRow(k, scores.mean, label, result.best_epoch, scores))
    return rows


def is_monotone(rows: Sequence[AblationRow]) -> bool:
    means = [r.mean_dice for r in rows]
    return all(b >= a for a, b in zip(means, means[1:]))


def sweep_alpha_beta(
    base_config: UNetConfig,
    train_set: Sequence[Sample],
    val_set: Sequence[Sample],
    test_set: Sequence[Sample],
    train_config: TrainConfig,
    grid: Sequence[tuple[float, float]] = DEFAULT_GRID,
    seed: int = 0,
    progress: Callable[[str], None] | None = None,
) -> list[SweepRow]:
    """Train one full-AReLU model per ``(alpha_init, beta_init)`` grid point."""
    if not grid:
        raise ValueError("grid is empty")
    rows = []
    for alpha, beta in grid:
        cfg = replace(base_config, arelu_count=5, alpha_init=float(alpha), beta_init=float(beta))
        if progress:
            progress(f"training alpha={alpha} beta={beta}")
        scores, result = _train_and_score(cfg, train_set, val_set, test_set, train_config, seed, f"a={alpha},b={beta}")
        rows.append(SweepRow(float(alpha), float(beta), scores.mean, result.best_epoch, scores))
    best = max(range(len(rows)), key=lambda i: rows[i].mean_dice)
    rows[best].best = True
    return rows


# ---------------------------------------------------------------------------
# table rendering
# ---------------------------------------------------------------------------


def _aligned(header: Sequence[str], body: Sequence[Sequence[str]], right: Sequence[bool]) -> str:
    widths = [max(len(str(x)) for x in col) for col in zip(header, *body)]

    def line(cells):
        return " | ".join(str(c).rjust(w) if r else str(c).ljust(w) for c, w, r in zip(cells, widths, right))

    rule = "-+-".join("-" * w for w in widths)
    return "\n".join([line(header), rule] + [line(row) for row in body]) + "\n"


def ablation_text(rows: Sequence[AblationRow]) -> str:
    body = [[str(r.k), format_percent(r.mean_dice), r.label] for r in rows]
    text = _aligned(["# AReLU", "% Dice Score", "model"], body, [True, True, False])
    return text + f"monotone in k: {'yes' if is_monotone(rows) else 'no'}\n"


def write_ablation_csv(rows: Sequence[AblationRow], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "dice_percent", "mean_dice", "best_epoch", "label"])
        for r in rows:
            w.writerow([r.k, format_percent(r.mean_dice), repr(r.mean_dice), r.best_epoch, r.label])


def sweep_text(rows: Sequence[SweepRow]) -> str:
    body = [[f"{r.alpha:.2f}", f"{r.beta:.1f}", format_percent(r.mean_dice) + (" *" if r.best else "")] for r in rows]
    return _aligned(["alpha", "beta", "% Dice Score"], body, [True, True, True])


def write_sweep_csv(rows: Sequence[SweepRow], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["alpha", "beta", "dice_percent", "mean_dice", "best_epoch", "best"])
        for r in rows:
            w.writerow([r.alpha, r.beta, format_percent(r.mean_dice), repr(r.mean_dice), r.best_epoch, int(r.best)])


def comparison_text(vectors: Sequence[ScoreVector]) -> str:
    body = [[v.tag, v.mean_percent] for v in vectors]
    return _aligned(["Model", "% Dice Score"], body, [False, True])


def ttest_text(label: str, result: TTestResult) -> str:
    body = [[label, f"{result.t:.4f}", str(result.dof), f"{result.p_value:.6g}", format_p(result.p_value)]]
    return _aligned(["Comparison", "t", "dof", "p", "P-Value"], body, [False, True, True, True, True])
