"""``sandwich-unet`` command line: generate, train, eval, ablate, sweep, segment, stats.

Every command writes ``run_manifest.json`` into its output directory.  All
randomness derives from ``--seed``:

* generate: phantom ``i`` is drawn from ``seed * 100003 + i``; the train/val
  split shuffles with ``seed``.
* train / ablate / sweep: weight init uses ``seed``; epoch shuffles and
  augmentation draw from ``(seed, "shuffle", epoch)`` and ``(seed, "augment", epoch)``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .contour import contours_to_json, extract_contours, render_overlay
from .data import (
    AugmentationConfig,
    Dataset,
    PhantomSpec,
    Sample,
    generate_dataset,
    load_split,
    read_manifest,
    read_mask,
    read_pgm,
    save_dataset,
    split_dataset,
    write_mask,
    MANIFEST_NAME,
)
from .errors import CheckpointError, DataError, NumericalError, ShapeError
from .evaluate import (
    DEFAULT_GRID,
    ScoreVector,
    ablate_arelu,
    ablation_text,
    aligned_scores,
    evaluate,
    format_percent,
    sweep_alpha_beta,
    sweep_text,
    ttest_text,
    write_ablation_csv,
    write_sweep_csv,
)
from .model import DIVISOR, UNetConfig, build, load_checkpoint, save_checkpoint
from .stats import paired_t_test
from .train import TrainConfig, dice_coefficient, predict, train, write_metrics_csv

logger = logging.getLogger("sandwich_unet")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3
MANIFEST_FILE = "run_manifest.json"
CHECKPOINT_FILE = "model.swun"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad flags; 2 is reserved for data errors here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# flag types
# ---------------------------------------------------------------------------


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _image_size(text: str) -> int:
    value = _positive_int(text)
    if value % DIVISOR:
        raise argparse.ArgumentTypeError(f"size {value} is not divisible by {DIVISOR}")
    return value


def _k_range(text: str) -> list[int]:
    """``0..5`` or a comma list ``0,2,5``."""
    try:
        if ".." in text:
            lo, hi = (int(x) for x in text.split(".."))
            ks = list(range(lo, hi + 1))
        else:
            ks = [int(x) for x in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad k range {text!r}") from None
    if not ks or any(not 0 <= k <= 5 for k in ks):
        raise argparse.ArgumentTypeError(f"k values must lie in 0..5, got {text!r}")
    return sorted(set(ks))


def _grid(text: str) -> list[tuple[float, float]]:
    """``alpha:beta,alpha:beta,...``."""
    try:
        pts = [tuple(float(v) for v in item.split(":")) for item in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad grid {text!r}") from None
    if not pts or any(len(p) != 2 for p in pts):
        raise argparse.ArgumentTypeError(f"grid points must be alpha:beta, got {text!r}")
    return pts


# ---------------------------------------------------------------------------
# manifest + shared helpers
# ---------------------------------------------------------------------------


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _flags(args: argparse.Namespace) -> dict:
    out = {}
    for key, value in sorted(vars(args).items()):
        if key in ("func",):
            continue
        if isinstance(value, Path):
            value = str(value)
        elif isinstance(value, list):
            value = [list(v) if isinstance(v, tuple) else v for v in value]
        out[key] = value
    return out


def write_run_manifest(out_dir: Path, args: argparse.Namespace, started: str, outputs: Sequence[Path], extra: dict | None = None) -> Path:
    manifest = {
        "command": args.command,
        "flags": _flags(args),
        "seed": getattr(args, "seed", None),
        "version": __version__,
        "started": started,
        "finished": _now(),
        "out_dir": str(out_dir),
        "outputs": sorted(str(Path(p).relative_to(out_dir)) for p in outputs),
    }
    if extra:
        manifest.update(extra)
    path = out_dir / MANIFEST_FILE
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


def _out_dir(path: Path) -> Path:
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {path}: {exc}") from exc
    return path


def _load_dataset(data_dir: Path) -> Dataset:
    rows = read_manifest(data_dir / MANIFEST_NAME)
    splits = {r.split for r in rows}
    ds = Dataset(*(load_split(data_dir, s) if s in splits else [] for s in ("train", "val", "test")))
    for s in ds.train + ds.val + ds.test:
        h, w = s.image.shape
        if h % DIVISOR or w % DIVISOR:
            raise DataError(f"sample {s.id} is {h}x{w}; the model needs multiples of {DIVISOR}")
    return ds


def _training_sets(ds: Dataset) -> tuple[list[Sample], list[Sample]]:
    if not ds.train:
        raise DataError("dataset has no 'train' split")
    if not ds.val:
        raise DataError("dataset has no 'val' split")
    return ds.train, ds.val


def _scoring_set(ds: Dataset) -> tuple[str, list[Sample]]:
    if ds.test:
        return "test", ds.test
    if ds.val:
        logger.warning("no 'test' split; scoring on 'val'")
        return "val", ds.val
    raise DataError("dataset has neither a 'test' nor a 'val' split")


def _train_config(args: argparse.Namespace, crop: int) -> TrainConfig:
    return TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch,
        lr=args.lr,
        patience=args.patience,
        min_delta=args.min_delta,
        seed=args.seed,
        augmentation=AugmentationConfig(crop_size=crop) if args.augment else None,
    )


def _model_config(args: argparse.Namespace, k: int | None = None) -> UNetConfig:
    try:
        return UNetConfig(
            base_width=args.base_width,
            arelu_count=args.k if k is None else k,
            alpha_init=getattr(args, "alpha_init", 0.9),
            beta_init=getattr(args, "beta_init", 0.9),
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _progress(message: str) -> None:
    logger.info(message)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_generate(args) -> int:
    started = _now()
    out = _out_dir(args.out)
    spec = PhantomSpec(size=args.size)
    samples = generate_dataset(args.count + args.test_count, spec, args.seed)
    pool, test = samples[: args.count], samples[args.count :]
    if args.count >= 2:
        tr, va = split_dataset(pool, args.train_frac, args.seed)
    else:
        tr, va = pool, []
    splits = {"train": tr, "val": va}
    if test:
        splits["test"] = test
    rows = save_dataset(splits, out)
    outputs = [out / MANIFEST_NAME] + [out / r.image for r in rows] + [out / r.mask for r in rows]
    write_run_manifest(out, args, started, outputs)
    counts = {k: len(v) for k, v in splits.items()}
    print("split,count")
    for name, n in counts.items():
        print(f"{name},{n}")
    return EXIT_OK


def cmd_train(args) -> int:
    started = _now()
    config = _model_config(args)
    ds = _load_dataset(args.data)
    train_set, val_set = _training_sets(ds)
    out = _out_dir(args.out)
    tcfg = _train_config(args, train_set[0].image.shape[0])
    model = build(config, seed=args.seed)
    t0 = time.perf_counter()
    result = train(model, train_set, val_set, tcfg)
    elapsed = time.perf_counter() - t0

    ckpt = out / CHECKPOINT_FILE
    save_checkpoint(result.model, ckpt)
    metrics = out / "metrics.csv"
    write_metrics_csv(result.history, config.arelu_count, metrics)
    outputs = [ckpt, metrics]
    if not args.no_plots:
        from .plotting import plot_arelu_parameters, plot_training_curves

        outputs.append(plot_training_curves(result.history, out / "training_curves.png", f"k = {config.arelu_count}"))
        arelu_png = plot_arelu_parameters(result.history, out / "arelu_parameters.png")
        if arelu_png is not None:
            outputs.append(arelu_png)
    write_run_manifest(
        out,
        args,
        started,
        outputs,
        {"best_epoch": result.best_epoch, "epochs_run": len(result.history), "stopped_early": result.early_stop.stopped},
    )
    print("epochs_run,best_epoch,best_val_loss,parameters,seconds")
    print(f"{len(result.history)},{result.best_epoch},{result.early_stop.best_val_loss:.6f},{model.num_parameters()},{elapsed:.1f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    started = _now()
    model = load_checkpoint(args.checkpoint)
    ds = _load_dataset(args.data)
    split, samples = (args.split, getattr(ds, args.split)) if args.split else _scoring_set(ds)
    if not samples:
        raise DataError(f"dataset has no {split!r} split")
    out = _out_dir(args.out)
    scores = evaluate(model, samples, args.tag or f"k={model.config.arelu_count}")
    csv_path = out / "scores.csv"
    scores.write_csv(csv_path)
    summary = f"model,split,n,dice_percent\n{scores.tag},{split},{len(scores.scores)},{scores.mean_percent}\n"
    (out / "summary.csv").write_text(summary)
    write_run_manifest(out, args, started, [csv_path, out / "summary.csv"], {"mean_dice": scores.mean})
    sys.stdout.write(summary)
    return EXIT_OK


def _harness_data(args):
    ds = _load_dataset(args.data)
    train_set, val_set = _training_sets(ds)
    split, test_set = _scoring_set(ds)
    return train_set, val_set, test_set, split


def cmd_ablate(args) -> int:
    started = _now()
    train_set, val_set, test_set, split = _harness_data(args)
    out = _out_dir(args.out)
    base = _model_config(args, k=0)
    rows = ablate_arelu(base, train_set, val_set, test_set, _train_config(args, train_set[0].image.shape[0]), args.k_range, args.seed, _progress)
    csv_path, txt_path = out / "ablation.csv", out / "ablation.txt"
    write_ablation_csv(rows, csv_path)
    text = ablation_text(rows)
    txt_path.write_text(text)
    outputs = [csv_path, txt_path]
    for r in rows:
        p = out / f"scores_k{r.k}.csv"
        r.scores.write_csv(p)
        outputs.append(p)
    if not args.no_plots:
        from .plotting import plot_ablation

        outputs.append(plot_ablation(rows, out / "ablation.png"))
    write_run_manifest(out, args, started, outputs, {"scored_split": split})
    sys.stdout.write(text)
    return EXIT_OK


def cmd_sweep(args) -> int:
    started = _now()
    train_set, val_set, test_set, split = _harness_data(args)
    out = _out_dir(args.out)
    base = _model_config(args, k=5)
    rows = sweep_alpha_beta(base, train_set, val_set, test_set, _train_config(args, train_set[0].image.shape[0]), args.grid, args.seed, _progress)
    csv_path, txt_path = out / "sweep.csv", out / "sweep.txt"
    write_sweep_csv(rows, csv_path)
    text = sweep_text(rows)
    txt_path.write_text(text)
    outputs = [csv_path, txt_path]
    if not args.no_plots:
        from .plotting import plot_sweep

        outputs.append(plot_sweep(rows, out / "sweep.png"))
    write_run_manifest(out, args, started, outputs, {"scored_split": split})
    sys.stdout.write(text)
    return EXIT_OK


def cmd_segment(args) -> int:
    started = _now()
    model = load_checkpoint(args.checkpoint)
    image = read_pgm(args.image)
    h, w = image.shape
    if h % DIVISOR or w % DIVISOR:
        raise DataError(f"image is {h}x{w}; the model needs multiples of {DIVISOR}")
    out = _out_dir(args.out)
    prob = predict(model, image)
    mask = (prob >= 0.5).astype(np.uint8)
    contours = extract_contours(mask)
    paths = {
        "mask": out / "mask.pgm",
        "contours": out / "contours.json",
        "overlay_pgm": out / "overlay.pgm",
        "overlay_ppm": out / "overlay.ppm",
    }
    write_mask(mask, paths["mask"])
    paths["contours"].write_text(contours_to_json(contours) + "\n")
    render_overlay(image, contours, paths["overlay_pgm"], color=False)
    render_overlay(image, contours, paths["overlay_ppm"], color=True)
    outputs = list(paths.values())
    truth = read_mask(args.truth) if args.truth else None
    if truth is not None and truth.shape != mask.shape:
        raise DataError(f"truth mask {truth.shape} does not match image {mask.shape}")
    if not args.no_plots:
        from .plotting import plot_segmentation

        outputs.append(plot_segmentation(image, prob, contours, out / "segmentation.png", truth))
    extra = {"contours": len(contours)}
    print("contours,foreground_pixels" + (",dice" if truth is not None else ""))
    line = f"{len(contours)},{int(mask.sum())}"
    if truth is not None:
        extra["dice"] = dice_coefficient(mask, truth)
        line += f",{format_percent(extra['dice'])}"
    print(line)
    write_run_manifest(out, args, started, outputs, extra)
    return EXIT_OK


def _score_tag(path: Path) -> str:
    # eval writes <out>/scores.csv, so the directory names the model
    return path.parent.resolve().name if path.stem == "scores" else path.stem


def cmd_stats(args) -> int:
    started = _now()
    a = ScoreVector.read_csv(args.scores_a, _score_tag(args.scores_a))
    b = ScoreVector.read_csv(args.scores_b, _score_tag(args.scores_b))
    xs, ys = aligned_scores(a, b)
    result = paired_t_test(xs, ys, args.alternative)
    label = f"{a.tag} vs {b.tag}"
    print(f"t={result.t:g}, p={result.p_value:g}")
    text = ttest_text(label, result)
    sys.stdout.write(text)
    if args.out is not None:
        out = _out_dir(args.out)
        path = out / "ttest.txt"
        path.write_text(text)
        write_run_manifest(out, args, started, [path], {"t": result.t, "p_value": result.p_value, "dof": result.dof})
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _add_training_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", type=Path, required=True, help="dataset directory (from 'generate')")
    p.add_argument("--epochs", type=_positive_int, default=200)
    p.add_argument("--batch", type=_positive_int, default=2)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--patience", type=_positive_int, default=20)
    p.add_argument("--min-delta", type=float, default=1e-4)
    p.add_argument("--base-width", type=_positive_int, default=32, help="channels of the first encoder block")
    p.add_argument("--augment", action="store_true", help="augment training batches on the fly")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--no-plots", action="store_true", help="skip PNG figures")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sandwich-unet", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", help="write synthetic spine phantoms")
    p.add_argument("--count", type=_positive_int, required=True, help="train+val phantoms")
    p.add_argument("--test-count", type=int, default=0, help="extra phantoms tagged 'test'")
    p.add_argument("--size", type=_image_size, default=128)
    p.add_argument("--train-frac", type=float, default=0.8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train one model")
    p.add_argument("--k", type=int, choices=range(6), default=5, help="decoder blocks with AReLU, deepest first")
    p.add_argument("--alpha-init", type=float, default=0.9)
    p.add_argument("--beta-init", type=float, default=0.9)
    _add_training_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="per-image Dice of a checkpoint")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--split", choices=("train", "val", "test"), default=None, help="default: test, else val")
    p.add_argument("--tag", default=None)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train k = 0..5 AReLU decoder blocks")
    p.add_argument("--k-range", type=_k_range, default=list(range(6)), help="e.g. 0..5 or 0,5")
    _add_training_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("sweep", help="train k = 5 over alpha/beta initialisations")
    p.add_argument("--grid", type=_grid, default=list(DEFAULT_GRID), help="alpha:beta,alpha:beta,...")
    _add_training_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("segment", help="mask, contours and overlays for one image")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--image", type=Path, required=True, help="8-bit PGM")
    p.add_argument("--truth", type=Path, default=None, help="optional ground-truth mask PGM")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("stats", help="paired t-test between two score files")
    p.add_argument("--scores-a", type=Path, required=True)
    p.add_argument("--scores-b", type=Path, required=True)
    p.add_argument("--alternative", choices=("two-sided", "greater", "less"), default="two-sided")
    p.add_argument("--out", type=Path, default=None)
    p.set_defaults(func=cmd_stats)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"sandwich-unet {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, CheckpointError, ShapeError, OSError) as exc:
        print(f"sandwich-unet {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, ArithmeticError) as exc:
        print(f"sandwich-unet {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
