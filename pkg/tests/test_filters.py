from fractions import Fraction

import numpy as np
import pytest

from semaug.backends import FakeScorer
from semaug.config import PipelineConfig
from semaug.errors import MissingOriginal, ValidationError
from semaug.filters import (
    FilterReport,
    apply_filter_reports,
    copy_filtered_manifest,
    label_filter,
    label_prompt,
    original_image_filter,
    per_label_means,
    prompt_filter,
    run_filter_chain,
)
from semaug.generation import AugmentationManifest, AugRecord, make_header, run_pipeline
from semaug.imaging import write_png


class LookupScorer:
    """Scores an image by its first pixel value through a fixed table."""

    backend_id = "lookup"
    similarity_range = (-1.0, 1.0)

    def __init__(self, table):
        self.table = table

    def image_text_similarity(self, image, texts):
        return [self.table[int(image[0, 0, 0])] for _ in texts]


def manifest_with_values(root, values, label="cat"):
    records = []
    for i, v in enumerate(values):
        rel = f"{label}/r{i}_0.png"
        write_png(root / rel, np.full((4, 4, 3), v, np.uint8))
        records.append(AugRecord(record_id=f"r{i}", aug_index=0, label_raw=label, label_text=label, method="sgid",
                                 backend_id="fake", mode="img2img", source_path=None, output_path=rel,
                                 checksum=None, prompt={"rendered_text": f"A picture of a {label}."}))
    return AugmentationManifest(make_header("h", "sgid"), records, root=root)


def test_prompt_filter_keeps_scores_at_or_above_mean(tmp_path):
    m = manifest_with_values(tmp_path, [1, 2, 3])
    report = prompt_filter(m, LookupScorer({1: 0.2, 2: 0.4, 3: 0.6}))
    kept = sorted(d.score for d in report.decisions if d.kept)
    assert kept == [0.4, 0.6]


def test_equal_scores_are_all_kept():
    # a naive float mean of three 0.1s lands one ulp above 0.1 and would drop all three
    assert sum([0.1] * 3) / 3 > 0.1
    assert per_label_means({"a": [0.1] * 3}) == {"a": 0.1}
    assert per_label_means({"a": [0.1] * 7}) == {"a": 0.1}


def test_label_prompt_article():
    assert label_prompt("cat") == "a photo of a cat"
    assert label_prompt("airplane") == "a photo of an airplane"


def test_label_filter_unique_argmax_rule(tmp_path):
    class Fixed:
        def __init__(self, scores):
            self.scores = scores

        def image_text_similarity(self, image, texts):
            return self.scores

    m = manifest_with_values(tmp_path, [1], label="cat")
    assert label_filter(m, ["cat", "dog"], Fixed([0.3, 0.1])).decisions[0].kept is True
    assert label_filter(m, ["cat", "dog"], Fixed([0.1, 0.3])).decisions[0].kept is False
    assert label_filter(m, ["cat", "dog"], Fixed([0.3, 0.3])).decisions[0].kept is False  # tie drops
    with pytest.raises(ValidationError):
        label_filter(m, [], Fixed([]))


def test_failed_scoring_stays_pending(tmp_path):
    class Broken:
        def image_text_similarity(self, image, texts):
            raise RuntimeError("down")

    m = manifest_with_values(tmp_path, [1, 2])
    report = prompt_filter(m, Broken())
    assert all(d.kept is None for d in report.decisions)
    assert report.totals() == {"cat": {"kept": 0, "dropped": 0, "failed": 2}}
    assert {r.filter_status for r in apply_filter_reports(m, [report]).records} == {"pending"}


@pytest.fixture(scope="module")
def synthetic_run(synthetic_dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("filters")
    return run_pipeline(synthetic_dataset, PipelineConfig(k_augment=2), out_dir=out)


def exact_threshold_oracle(report):
    by_label = {}
    for d in report.decisions:
        by_label.setdefault(d.label, []).append(Fraction(d.score))
    means = {k: sum(v) / len(v) for k, v in by_label.items()}
    return {d.key: Fraction(d.score) >= means[d.label] for d in report.decisions}


def test_threshold_filters_match_exact_oracle(synthetic_run, synthetic_dataset):
    scorer = FakeScorer()
    for report in (prompt_filter(synthetic_run, scorer),
                   original_image_filter(synthetic_run, synthetic_dataset, scorer)):
        assert {d.key: d.kept for d in report.decisions} == exact_threshold_oracle(report)
        assert 0 < len(report.kept_keys()) < len(report.decisions)


def test_label_filter_matches_bruteforce(synthetic_run, synthetic_dataset):
    from semaug.imaging import load_rgb

    scorer = FakeScorer()
    labels = list(synthetic_dataset.label_set)
    report = label_filter(synthetic_run, labels, scorer)
    by_key = {f"{r.record_id}#{r.aug_index}": r for r in synthetic_run.records}
    for d in report.decisions:
        img = load_rgb(synthetic_run.resolve(by_key[d.key]))
        scores = [float(scorer.text_features(f"a photo of a {lbl}") @ scorer.image_features(img)) for lbl in labels]
        best = max(scores)
        winners = [lbl for lbl, s in zip(labels, scores) if s == best]
        assert d.kept == (winners == [d.label])


def test_original_filter_requires_originals(synthetic_run, synthetic_dataset):
    from dataclasses import replace

    stray = replace(synthetic_run.records[0], record_id="missing")
    broken = AugmentationManifest(synthetic_run.header, [stray], synthetic_run.root)
    with pytest.raises(MissingOriginal):
        original_image_filter(broken, synthetic_dataset, FakeScorer())


def test_chain_is_sequential_and_non_destructive(synthetic_run, synthetic_dataset, tmp_path):
    before = synthetic_run.dumps()
    filtered, reports = run_filter_chain(synthetic_run, ["prompt", "original"], FakeScorer(), synthetic_dataset)
    assert synthetic_run.dumps() == before
    assert {d.key for d in reports[1].decisions} == reports[0].kept_keys()
    kept = {f"{r.record_id}#{r.aug_index}" for r in filtered.records if r.filter_status == "kept"}
    assert kept == reports[1].kept_keys()
    assert filtered.header["filters"] == ["prompt", "original"]

    copy = copy_filtered_manifest(filtered, tmp_path / "elsewhere" / "filtered.jsonl")
    assert all(copy.resolve(r).is_file() for r in copy.ok_records())

    reports[0].write(tmp_path / "r.json")
    assert FilterReport.read(tmp_path / "r.json").kept_keys() == reports[0].kept_keys()
