"""Filter a generated set three ways and measure how far augmentations drift
from their originals as the noise rate grows.

    python3 demos/03_filters_and_similarity.py [out_dir]
"""

from __future__ import annotations

import sys
import tempfile
from pathlib import Path

from semaug.backends import FakeScorer
from semaug.config import PipelineConfig, noise_guidance_sweep
from semaug.dataset import scan_dataset
from semaug.evaluation import per_label_similarity, render_grid
from semaug.filters import copy_filtered_manifest, run_filter, run_filter_chain
from semaug.generation import run_pipeline
from semaug.synthetic import make_synthetic_dataset

out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="semaug-demo-"))
dataset = scan_dataset(make_synthetic_dataset(out / "data"))
scorer = FakeScorer()
manifest = run_pipeline(dataset, PipelineConfig(k_augment=2), out_dir=out / "sgid")

print("Each filter on its own:")
for kind in ("label", "prompt", "original"):
    report = run_filter(kind, manifest, scorer, dataset)
    print(f"  {kind:<9}", {label: t["kept"] for label, t in report.totals().items()}, "kept")

filtered, _ = run_filter_chain(manifest, ["label", "prompt", "original"], scorer, dataset)
copy_filtered_manifest(filtered, out / "filtered" / "manifest.jsonl")
print("chained:", filtered.counts())

print("\nOriginal/augmented similarity by noise rate:")
runs = {}
for name, cfg in noise_guidance_sweep(PipelineConfig()).items():
    runs[name] = run_pipeline(dataset, cfg, out_dir=out / name)
    report = per_label_similarity(runs[name], dataset, scorer, k=1, method_id=name)
    print(f"  {name}: overall {report.overall:.4f}  per label {dict((k, round(v, 4)) for k, v in report.per_label.items())}")

rows, cols = render_grid(dataset, runs, out / "grid.png", [r.record_id for r in dataset.records[::10]])
print(f"\ngrid {rows}x{cols} written to {out / 'grid.png'}")
