import numpy as np
import pytest

from semaug.backends import FakeScorer
from semaug.baselines import PerturbationConfig, run_baseline
from semaug.config import PipelineConfig
from semaug.errors import EmptySplit, SingleClass, ValidationError
from semaug.filters import run_filter_chain
from semaug.generation import run_pipeline
from semaug.trainer import (
    FeatureCache,
    TrainConfig,
    assemble_training_data,
    compare_configs,
    extract_features,
    format_table,
    loss_and_grad,
    lr_schedule,
    make_separable_blobs,
    split_originals,
    train_linear_probe,
)


def perceptron_separates(x, y, epochs=1000):
    """Multiclass perceptron; True once an epoch passes with zero mistakes."""
    classes = int(y.max()) + 1
    xb = np.hstack([x, np.ones((len(x), 1))])
    w = np.zeros((classes, xb.shape[1]))
    for _ in range(epochs):
        mistakes = 0
        for xi, yi in zip(xb, y):
            pred = int(np.argmax(w @ xi))
            if pred != yi:
                w[yi] += xi
                w[pred] -= xi
                mistakes += 1
        if mistakes == 0:
            return True
    return False


def test_lr_schedule_steps_at_milestones():
    cfg = TrainConfig(epochs=4, learning_rate=0.1, milestones=(2, 3))
    np.testing.assert_allclose(lr_schedule(cfg), [0.1, 0.1, 0.01, 0.001], rtol=1e-12)
    default = lr_schedule(TrainConfig())
    assert default[14] == 0.1 and default[15] == pytest.approx(0.01) and default[23] == pytest.approx(0.001)


def test_gradient_matches_central_differences():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(5, 5))  # a 5-sample batch
    targets = rng.dirichlet(np.ones(3), size=5)
    w, b = rng.normal(size=(5, 3)), rng.normal(size=3)
    _, gw, gb = loss_and_grad(w, b, x, targets, 5e-4)
    eps = 1e-6
    for params, grad in ((w, gw), (b, gb)):
        numeric = np.zeros_like(params)
        for idx in np.ndindex(params.shape):
            orig = params[idx]
            params[idx] = orig + eps
            up = loss_and_grad(w, b, x, targets, 5e-4)[0]
            params[idx] = orig - eps
            down = loss_and_grad(w, b, x, targets, 5e-4)[0]
            params[idx] = orig
            numeric[idx] = (up - down) / (2 * eps)
        rel = np.abs(numeric - grad) / np.maximum(np.abs(numeric) + np.abs(grad), 1e-12)
        assert rel.max() < 1e-4


def test_blobs_are_separable_and_probe_learns_them():
    x, y = make_separable_blobs(seed=0)
    assert perceptron_separates(x, y)
    xe, ye = make_separable_blobs(n_per_class=30, seed=1)
    _, result = train_linear_probe(x, y, xe, ye, TrainConfig(), ["a", "b", "c"])
    assert result.accuracy >= 0.95
    assert result.loss_curve[-1] < np.log(3)  # loss of the all-zero initial weights
    _, again = train_linear_probe(x, y, xe, ye, TrainConfig(), ["a", "b", "c"])
    assert again == result


def test_loss_does_not_rise_across_milestones():
    """Sanity property on the fixed separable fixture with the default schedule."""
    x, y = make_separable_blobs(seed=0)
    xe, ye = make_separable_blobs(n_per_class=30, seed=1)
    cfg = TrainConfig()
    _, result = train_linear_probe(x, y, xe, ye, cfg, ["a", "b", "c"])
    for m in cfg.milestones:
        assert result.loss_curve[m] <= result.loss_curve[m - 1], f"loss rose at milestone {m}"


def test_degenerate_inputs():
    x, y = make_separable_blobs(n_per_class=5)
    with pytest.raises(SingleClass):
        train_linear_probe(x[:5], y[:5], x, y, TrainConfig(epochs=1, milestones=()), ["a", "b", "c"])
    with pytest.raises(EmptySplit):
        train_linear_probe(x[:0], y[:0], x, y, TrainConfig(epochs=1, milestones=()))
    with pytest.raises(ValidationError):
        TrainConfig(milestones=(23, 15)).validate()


def test_split_is_stratified_and_disjoint(synthetic_dataset):
    train, held = split_originals(synthetic_dataset, TrainConfig())
    assert not set(train) & set(held)
    assert len(train) + len(held) == len(synthetic_dataset.records)
    by_id = synthetic_dataset.by_id()
    assert sorted({by_id[r].label_text for r in held}) == sorted(synthetic_dataset.label_set)


@pytest.fixture(scope="module")
def runs(synthetic_dataset, tmp_path_factory):
    root = tmp_path_factory.mktemp("runs")
    sgid = run_pipeline(synthetic_dataset, PipelineConfig(), out_dir=root / "sgid")
    filtered, _ = run_filter_chain(sgid, ["prompt"], FakeScorer(), synthetic_dataset)
    re = run_baseline(synthetic_dataset, PerturbationConfig(method="random_erasing"), root / "re")
    return sgid, filtered, re


def test_heldout_augmentations_never_train(synthetic_dataset, runs):
    sgid, filtered, _ = runs
    cfg = TrainConfig(epochs=2, milestones=())
    _, held = split_originals(synthetic_dataset, cfg)
    data = assemble_training_data(synthetic_dataset, [sgid], FakeScorer(), cfg)
    assert data.n_augmented == [len(sgid.records) - len(held)]
    assert len(data.x_eval) == len(held)
    dropped = sum(r.filter_status == "dropped" and r.record_id not in held for r in filtered.records)
    fdata = assemble_training_data(synthetic_dataset, [filtered], FakeScorer(), cfg)
    assert fdata.excluded_dropped == dropped > 0
    assert fdata.n_augmented[0] == data.n_augmented[0] - dropped


def test_compare_configs_rows(synthetic_dataset, runs):
    sgid, _, re = runs
    rows = compare_configs([("originals", []), ("sgid", [sgid]), ("re", [re])], synthetic_dataset, FakeScorer(),
                           TrainConfig(epochs=5, milestones=(3,)), seeds=[0, 1])
    assert [r["accuracy"] for r in rows] == sorted((r["accuracy"] for r in rows), reverse=True)
    assert {r["name"] for r in rows} == {"originals", "sgid", "re"}
    assert "accuracy" in format_table(rows).splitlines()[0]
    with pytest.raises(ValidationError):
        compare_configs([("only", [])], synthetic_dataset, FakeScorer(), TrainConfig())


def test_feature_cache_persists(synthetic_dataset, tmp_path):
    cache = FeatureCache.load(tmp_path / "f.npz")
    first = extract_features(synthetic_dataset, FakeScorer(), cache)
    cache.save()

    class Unused(FakeScorer):
        def image_features(self, image):
            raise AssertionError("cache miss")

    warm = FeatureCache.load(tmp_path / "f.npz")
    again = extract_features(synthetic_dataset, Unused(), warm, scorer_id="fake")
    np.testing.assert_array_equal(first.features, again.features)


def test_zero_noise_copies_match_originals_only(synthetic_dataset, tmp_path):
    copies = run_pipeline(synthetic_dataset, PipelineConfig(noise_rate=0.0), out_dir=tmp_path / "n0")
    cfg = TrainConfig(epochs=10, milestones=(6,))
    rows = compare_configs([("originals", []), ("copies", [copies])], synthetic_dataset, FakeScorer(), cfg,
                           seeds=[0, 1, 2])
    acc = {r["name"]: r["accuracy"] for r in rows}
    assert abs(acc["originals"] - acc["copies"]) <= 0.15


def test_combination_entry_sizes_add_up(synthetic_dataset, runs):
    sgid, _, re = runs
    cfg = TrainConfig(epochs=2, milestones=())
    rows = compare_configs([("sgid", [sgid]), ("re", [re]), ("sgid & re", [sgid, re])], synthetic_dataset,
                           FakeScorer(), cfg)
    n = {r["name"]: r["n_train"] for r in rows}
    n_orig = len(split_originals(synthetic_dataset, cfg)[0])
    assert n["sgid & re"] == n["sgid"] + n["re"] - n_orig
    again = compare_configs([("sgid", [sgid]), ("re", [re]), ("sgid & re", [sgid, re])], synthetic_dataset,
                            FakeScorer(), cfg)
    assert again == rows


def test_corrupt_image_is_excluded(synthetic_dataset, runs, tmp_path):
    from dataclasses import replace

    from semaug.generation import AugmentationManifest

    sgid = runs[0]
    bad = tmp_path / "broken.png"
    bad.write_bytes(b"not a png")
    broken = replace(sgid.records[0], output_path=str(bad), checksum=None)
    m = AugmentationManifest(sgid.header, [broken, *sgid.records[1:]], sgid.root)
    table = extract_features(m, FakeScorer())
    assert table.features.shape == (len(sgid.records) - 1, 64)
    assert list(table.failed) == [f"{broken.record_id}#0"]


def test_parallel_extraction_matches_serial(synthetic_dataset):
    serial = extract_features(synthetic_dataset, FakeScorer(), workers=1)
    parallel = extract_features(synthetic_dataset, FakeScorer(), workers=8)
    assert serial.keys == parallel.keys
    np.testing.assert_array_equal(serial.features, parallel.features)
