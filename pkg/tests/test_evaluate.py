import numpy as np
import pytest

from sandwich_unet.data import PhantomSpec, generate_dataset
from sandwich_unet.errors import DataError, ShapeError
from sandwich_unet.evaluate import (
    DEFAULT_GRID,
    ScoreVector,
    ablate_arelu,
    ablation_text,
    aligned_scores,
    comparison_text,
    evaluate,
    evaluate_masks,
    format_percent,
    is_monotone,
    sweep_alpha_beta,
    sweep_text,
    ttest_text,
    write_ablation_csv,
    write_sweep_csv,
)
from sandwich_unet.model import UNetConfig, build
from sandwich_unet.stats import paired_t_test
from sandwich_unet.train import TrainConfig, train


@pytest.fixture(scope="module")
def splits():
    ds = generate_dataset(5, PhantomSpec(size=64), seed=21)
    return ds[:2], ds[2:3], ds[3:]


FAST = TrainConfig(epochs=1, batch_size=2, seed=0)
BASE = UNetConfig(base_width=2)


def test_format_percent():
    assert format_percent(0.8358) == "83.58"
    assert format_percent(1.0) == "100.00"


def test_oracle_and_background_models(splits):
    _, _, test = splits
    perfect = evaluate_masks({s.id: s.mask.astype(float) for s in test}, test)
    assert perfect.mean_percent == "100.00"
    empty = evaluate_masks({s.id: np.zeros_like(s.image) for s in test}, test)
    for s, score in zip(sorted(test, key=lambda s: s.id), empty.scores):
        assert score == pytest.approx(1.0 / (s.mask.sum() + 1.0))


def test_evaluate_order_invariant(splits):
    _, _, test = splits
    model = build(BASE, seed=0)
    a = evaluate(model, test)
    b = evaluate(model, list(reversed(test)))
    assert a.ids == b.ids and a.scores == b.scores
    assert all(0.0 <= s <= 1.0 for s in a.scores)


def test_evaluate_errors(splits):
    model = build(BASE, seed=0)
    with pytest.raises(ValueError):
        evaluate(model, [])
    from sandwich_unet.data import Sample

    with pytest.raises(ShapeError):
        evaluate(model, [Sample(np.zeros((48, 48)), np.zeros((48, 48)), "x")])


def test_score_vector_csv(tmp_path):
    v = ScoreVector("m", ["b", "a"], [0.5, 0.25])
    assert v.ids == ["a", "b"]
    v.write_csv(tmp_path / "s.csv")
    assert (tmp_path / "s.csv").read_text().splitlines()[0] == "id,dice"
    back = ScoreVector.read_csv(tmp_path / "s.csv", "m")
    assert back.ids == v.ids and back.scores == v.scores
    with pytest.raises(DataError):
        ScoreVector.read_csv(tmp_path / "missing.csv")
    (tmp_path / "bad.csv").write_text("id,score\na,1\n")
    with pytest.raises(DataError):
        ScoreVector.read_csv(tmp_path / "bad.csv")


def test_aligned_scores_needs_same_ids():
    with pytest.raises(DataError):
        aligned_scores(ScoreVector("a", ["x"], [1.0]), ScoreVector("b", ["y"], [1.0]))


def test_ablation_table(splits, tmp_path):
    tr, va, te = splits
    rows = ablate_arelu(BASE, tr, va, te, FAST)
    assert [r.k for r in rows] == [0, 1, 2, 3, 4, 5]
    assert rows[0].label == "baseline U-Net"
    again = ablate_arelu(BASE, tr, va, te, FAST)
    assert [r.mean_dice for r in rows] == [r.mean_dice for r in again]
    text = ablation_text(rows)
    assert text.splitlines()[0].split("|")[1].strip() == "% Dice Score"
    assert ("monotone in k: yes" in text) == is_monotone(rows)
    write_ablation_csv(rows, tmp_path / "a.csv")
    lines = (tmp_path / "a.csv").read_text().splitlines()
    assert len(lines) == 7 and lines[0].startswith("k,dice_percent")


def test_sweep_table(splits, tmp_path):
    tr, va, te = splits
    rows = sweep_alpha_beta(BASE, tr, va, te, FAST)
    assert [(r.alpha, r.beta) for r in rows] == list(DEFAULT_GRID)
    assert sum(r.best for r in rows) == 1
    best = max(rows, key=lambda r: r.mean_dice)
    assert best.best
    assert "*" in sweep_text(rows)
    write_sweep_csv(rows, tmp_path / "s.csv")
    assert len((tmp_path / "s.csv").read_text().splitlines()) == 6
    with pytest.raises(ValueError):
        sweep_alpha_beta(BASE, tr, va, te, FAST, grid=[])


def test_single_point_sweep_equals_train_and_evaluate(splits):
    tr, va, te = splits
    (row,) = sweep_alpha_beta(BASE, tr, va, te, FAST, grid=[(0.75, 1.5)])
    cfg = UNetConfig(base_width=2, arelu_count=5, alpha_init=0.75, beta_init=1.5)
    direct = evaluate(train(build(cfg, seed=0), tr, va, FAST).model, te)
    assert row.scores.scores == direct.scores


def test_text_renderers():
    a = ScoreVector("U-Net", ["1", "2", "3"], [0.8, 0.79, 0.81])
    b = ScoreVector("Sandwich", ["1", "2", "3"], [0.83, 0.84, 0.82])
    assert "83.00" in comparison_text([a, b])
    res = paired_t_test(b.scores, a.scores)
    line = ttest_text("Sandwich vs U-Net", res).splitlines()[2]
    assert line.startswith("Sandwich vs U-Net")
