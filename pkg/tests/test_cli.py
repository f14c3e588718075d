import json

import pytest

from semaug.cli import main
from semaug.generation import AugmentationManifest


@pytest.fixture(autouse=True)
def isolated_cwd(tmp_path, monkeypatch):
    """Default output paths are relative; keep them out of the source tree."""
    monkeypatch.chdir(tmp_path)


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr().out.strip().splitlines()
    return code, json.loads(out[-1])


@pytest.fixture
def scanned(synthetic_root, tmp_path, capsys):
    path = tmp_path / "dataset.json"
    code, summary = run(capsys, "scan", synthetic_root, "--out", path)
    assert code == 0 and summary["records"] == 30 and summary["labels"] == 3
    return path


def test_full_workflow(scanned, tmp_path, capsys):
    aug = tmp_path / "aug"
    code, s = run(capsys, "augment", "--dataset", scanned, "--out-dir", aug, "--backend.caption=fake",
                  "--seed", 3, "--workers", 2)
    assert code == 0 and s["status"] == "ok" and s["records"] == 30
    assert (aug / "run.log").is_file() and (aug / "captions.jsonl").is_file()
    manifest = AugmentationManifest.read(aug / "manifest.jsonl")
    assert manifest.header["config"]["global_seed"] == 3

    code, s = run(capsys, "caption", "--dataset", scanned, "--out-dir", aug, "--seed", 3)
    assert code == 0 and s["reused"] == 30

    code, s = run(capsys, "baseline", "--dataset", scanned, "--method", "cutmix", "--out-dir", tmp_path / "cm")
    assert code == 0 and s["records"] == 30

    code, s = run(capsys, "filter", "--manifest", aug / "manifest.jsonl", "--dataset", scanned,
                  "--kind", "label", "--kind", "prompt", "--out-dir", tmp_path / "filt")
    assert code == 0 and s["kept"] + s["dropped"] + s["pending"] == 30
    filtered = tmp_path / "filt" / "manifest.filtered.jsonl"
    assert filtered.is_file() and len(s["reports"]) == 2

    code, s = run(capsys, "eval-similarity", "--manifest", aug / "manifest.jsonl", "--dataset", scanned,
                  "--out", tmp_path / "sim.json")
    assert code == 0 and 0 < s["overall"] < 1 and (tmp_path / "sim.csv").is_file()

    code, s = run(capsys, "grid", "--dataset", scanned, "--manifest", f"SGID={aug / 'manifest.jsonl'}",
                  "--manifest", f"CutMix={tmp_path / 'cm' / 'manifest.jsonl'}", "--out", tmp_path / "grid.png",
                  "--limit", 4)
    assert code == 0 and (s["rows"], s["columns"]) == (4, 3)

    code, s = run(capsys, "train", "--dataset", scanned, "--manifest", filtered, "--out-dir", tmp_path / "t")
    assert code == 0 and 0 <= s["accuracy"] <= 1 and s["excluded_dropped"] >= 0

    code, s = run(capsys, "compare", "--dataset", scanned, "--entry", "originals=",
                  "--entry", f"sgid={aug / 'manifest.jsonl'}", "--seeds", 0, 1, "--out-dir", tmp_path / "c")
    assert code == 0 and len(s["ranking"]) == 2


def test_dry_run_writes_nothing(scanned, tmp_path, capsys):
    code, s = run(capsys, "augment", "--dataset", scanned, "--out-dir", tmp_path / "dry", "--dry-run",
                  "--k-augment", 3)
    assert code == 0 and s["planned"] == 90
    assert not (tmp_path / "dry").exists()


def test_errors_exit_one(scanned, tmp_path, capsys):
    assert run(capsys, "augment", "--dataset", tmp_path / "missing.json")[0] == 1
    assert run(capsys, "augment", "--dataset", scanned, "--backend.score=nope", "--dry-run")[0] == 1
    assert run(capsys, "augment", "--dataset", scanned, "--noise-rate", 2, "--dry-run")[0] == 1
    assert run(capsys, "frobnicate")[0] == 1
    assert run(capsys, "filter", "--manifest", scanned, "--kind", "label", "--dry-run")[0] == 1


def test_partial_failure_exits_two(scanned, tmp_path, capsys, monkeypatch):
    from semaug.backends import fakes

    real = fakes.FakeDiffusion.generate
    def flaky(self, image, prompt, *a, **k):
        if "red disc" in getattr(prompt, "rendered_text", str(prompt)):
            raise RuntimeError("simulated outage")
        return real(self, image, prompt, *a, **k)

    monkeypatch.setattr(fakes.FakeDiffusion, "generate", flaky)
    code, s = run(capsys, "augment", "--dataset", scanned, "--out-dir", tmp_path / "p")
    assert code == 2 and s["status"] == "partial_failure" and s["failed"] == 10


def test_config_file_and_overrides(scanned, tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"noise_rate": 0.3, "prompt_mode": "label_only"}))
    code, s = run(capsys, "augment", "--dataset", scanned, "--config", cfg, "--prompt-mode", "caption_only",
                  "--out-dir", tmp_path / "o")
    assert code == 0
    header = AugmentationManifest.read(tmp_path / "o" / "manifest.jsonl").header
    assert header["config"]["noise_rate"] == 0.3 and header["config"]["prompt_mode"] == "caption_only"
