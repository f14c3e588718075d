import numpy as np
import pytest

from semaug.backends import FakeCaptioner, FakeDiffusion, FakeScorer
from semaug.config import PipelineConfig
from semaug.errors import DimensionMismatch, EmptyPrompt, SchemaMismatch, ValidationError
from semaug.generation import (
    AugmentationManifest,
    Backends,
    GenerationRequest,
    augment_image,
    run_pipeline,
    text_to_image,
    verify_checksums,
)
from semaug.imaging import load_rgb
from semaug.prompting import build_prompt


def _request(**kw):
    base = dict(record_id="abc", label_raw="cat", prompt=build_prompt("cat", "a cat", "full"), g_raw=1.0,
                g_applied=1.0, noise_rate=0.5, seed=7)
    base.update(kw)
    return GenerationRequest(**base)


def test_augment_image_writes_record(tmp_path, rng):
    src = rng.integers(0, 256, size=(16, 16, 3), dtype=np.uint8)
    rec = augment_image(_request(), src, FakeDiffusion(), tmp_path, source_path="cat/0.png")
    assert rec.ok and rec.output_path == "cat/abc_0.png" and rec.filter_status == "pending"
    assert load_rgb(tmp_path / rec.output_path).shape == src.shape


class Flaky:
    backend_id = "flaky"

    def __init__(self, failures):
        self.failures = failures

    def generate(self, image, *a, **k):
        if self.failures:
            self.failures -= 1
            raise RuntimeError("transient")
        return image


class Wrong:
    def generate(self, image, *a, **k):
        return image[:-1]


def test_retries_then_failed_record(tmp_path, rng):
    src = rng.integers(0, 256, size=(8, 8, 3), dtype=np.uint8)
    assert augment_image(_request(), src, Flaky(2), tmp_path, retries=2).ok
    rec = augment_image(_request(), src, Flaky(3), tmp_path, retries=2)
    assert rec.status == "failed" and rec.output_path is None and "transient" in rec.error


def test_dimension_mismatch_is_hard_error(tmp_path, rng):
    with pytest.raises(DimensionMismatch):
        augment_image(_request(), rng.integers(0, 256, size=(8, 8, 3), dtype=np.uint8), Wrong(), tmp_path)


def test_text_to_image(tmp_path):
    rec = text_to_image(_request(mode="text2img", output_size=(10, 12)), FakeDiffusion(), tmp_path)
    assert rec.source_path is None and load_rgb(tmp_path / rec.output_path).shape == (10, 12, 3)
    with pytest.raises(EmptyPrompt):
        text_to_image(_request(mode="text2img", prompt=build_prompt(None, None, "none")), FakeDiffusion(), tmp_path)


def test_filter_transition_is_one_way(tmp_path, rng):
    rec = augment_image(_request(), rng.integers(0, 256, size=(8, 8, 3), dtype=np.uint8), FakeDiffusion(), tmp_path)
    kept = rec.with_filter("kept")
    with pytest.raises(ValidationError):
        kept.with_filter("dropped")
    with pytest.raises(ValidationError):
        rec.with_filter("pending")


def test_pipeline_manifest_contents(synthetic_dataset, tmp_path):
    cfg = PipelineConfig(k_augment=2)
    m = run_pipeline(synthetic_dataset, cfg, out_dir=tmp_path)
    assert len(m.records) == 2 * len(synthetic_dataset.records)
    assert m.header["config_hash"] == cfg.config_hash()
    assert verify_checksums(m) == []
    for r in m.records:
        assert r.g_raw == pytest.approx(-4 * r.s_star**2 + 2 * r.s_star + 1, abs=1e-12)
        assert r.prompt_text.startswith(f"A picture of a {r.label_text}, ")
        assert r.noise_rate == 0.5 and r.denoising_steps == 100
    seeds = {(r.record_id, r.aug_index): r.seed for r in m.records}
    assert len(set(seeds.values())) == len(seeds)
    assert AugmentationManifest.read(tmp_path / "manifest.jsonl") == m


def test_checksum_detects_tampering(synthetic_dataset, tmp_path):
    m = run_pipeline(synthetic_dataset, PipelineConfig(), out_dir=tmp_path)
    path = m.resolve(m.records[0])
    path.write_bytes(path.read_bytes() + b"\0")
    assert verify_checksums(m) == [f"{m.records[0].record_id}#0"]


def test_caption_cache_reused(synthetic_dataset, tmp_path):
    cfg = PipelineConfig()
    first = run_pipeline(synthetic_dataset, cfg, out_dir=tmp_path / "a")
    assert (tmp_path / "a" / "captions.jsonl").is_file()

    class NoCaptions(FakeCaptioner):
        def caption(self, *a, **k):
            raise AssertionError("captioner must not be used when the cache is warm")

    cfg_cached = cfg.with_overrides(caption_cache=str(tmp_path / "a" / "captions.jsonl"))
    cached = run_pipeline(synthetic_dataset, cfg_cached, Backends(NoCaptions(), FakeScorer(), FakeDiffusion()),
                          out_dir=tmp_path / "b")
    assert cached.dumps() == first.dumps()


def test_unknown_manifest_version(tmp_path, synthetic_dataset):
    m = run_pipeline(synthetic_dataset, PipelineConfig(), out_dir=tmp_path)
    text = (tmp_path / "manifest.jsonl").read_text().replace('"format_version": "1"', '"format_version": "7"', 1)
    (tmp_path / "manifest.jsonl").write_text(text)
    with pytest.raises(SchemaMismatch):
        AugmentationManifest.read(tmp_path / "manifest.jsonl")
