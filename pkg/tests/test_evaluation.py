import math

import numpy as np
import pytest
from PIL import Image

from semaug.backends import FakeScorer
from semaug.baselines import PerturbationConfig, run_baseline
from semaug.config import PipelineConfig
from semaug.errors import IncompleteGroup, NoCommonRecords
from semaug.evaluation import per_label_similarity, render_grid
from semaug.generation import AugmentationManifest, run_pipeline
from semaug.imaging import load_rgb


@pytest.fixture(scope="module")
def sgid_run(synthetic_dataset, tmp_path_factory):
    return run_pipeline(synthetic_dataset, PipelineConfig(k_augment=2), out_dir=tmp_path_factory.mktemp("eval"))


def test_similarity_matches_direct_average(sgid_run, synthetic_dataset, tmp_path):
    scorer = FakeScorer()
    report = per_label_similarity(sgid_run, synthetic_dataset, scorer, k=2)
    by_id = synthetic_dataset.by_id()
    per_label = {}
    for rid in {r.record_id for r in sgid_run.records}:
        orig = load_rgb(synthetic_dataset.resolve(by_id[rid]))
        sims = [float(scorer.image_features(orig) @ scorer.image_features(load_rgb(sgid_run.resolve(r))))
                for r in sgid_run.records if r.record_id == rid]
        per_label.setdefault(by_id[rid].label_text, []).append(sum(sims) / len(sims))
    for label, vals in per_label.items():
        assert report.per_label[label] == pytest.approx(sum(vals) / len(vals), abs=1e-12)
    assert report.record_count == len(synthetic_dataset.records)
    json_path, csv_path = report.write(tmp_path / "sim.json")
    assert csv_path.read_text().splitlines()[0] == "label,value,originals"


def test_group_size_must_equal_k(sgid_run, synthetic_dataset):
    with pytest.raises(IncompleteGroup):
        per_label_similarity(sgid_run, synthetic_dataset, FakeScorer(), k=3)


def test_zero_noise_similarity_is_one(synthetic_dataset, tmp_path):
    m = run_pipeline(synthetic_dataset, PipelineConfig(noise_rate=0.0), out_dir=tmp_path)
    report = per_label_similarity(m, synthetic_dataset, FakeScorer(), k=1)
    assert math.isclose(report.overall, 1.0, abs_tol=1e-9)


def test_grid_shape_and_placeholders(sgid_run, synthetic_dataset, tmp_path):
    re = run_baseline(synthetic_dataset, PerturbationConfig(method="random_erasing"), tmp_path / "re")
    partial = AugmentationManifest(re.header, re.records[:3], re.root)
    ids = [r.record_id for r in synthetic_dataset.records[:5]]
    rows, cols = render_grid(synthetic_dataset, {"SGID": sgid_run, "RE": partial}, tmp_path / "g.png", ids)
    assert (rows, cols) == (5, 3)
    with Image.open(tmp_path / "g.png") as img:
        assert img.size[0] > img.size[1] / 5 * 2
    with pytest.raises(NoCommonRecords):
        render_grid(synthetic_dataset, {"RE": partial}, tmp_path / "x.png", ["nope"])
