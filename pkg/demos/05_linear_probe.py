"""Compare augmentation configurations with a linear probe on frozen features.

The probe trains on the original training split plus each configuration's
augmentations and is scored on held-out originals only.

    python3 demos/05_linear_probe.py [out_dir]
"""

from __future__ import annotations

import sys
import tempfile
from pathlib import Path

from semaug.backends import FakeScorer
from semaug.baselines import PerturbationConfig, run_baseline
from semaug.config import PipelineConfig, prompt_mode_ablation
from semaug.dataset import scan_dataset
from semaug.generation import run_pipeline
from semaug.synthetic import make_synthetic_dataset
from semaug.trainer import FeatureCache, TrainConfig, compare_configs, format_table, make_separable_blobs, train_linear_probe

# A sanity check first: the probe must solve an easy, linearly separable task.
x, y = make_separable_blobs(seed=0)
xe, ye = make_separable_blobs(n_per_class=30, seed=1)
_, result = train_linear_probe(x, y, xe, ye, TrainConfig(), ["a", "b", "c"])
print(f"separable blobs: accuracy {result.accuracy:.3f}, final loss {result.loss_curve[-1]:.4f}")

out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="semaug-demo-"))
dataset = scan_dataset(make_synthetic_dataset(out / "data", per_label=20))

entries = [("originals only", [])]
for name, cfg in prompt_mode_ablation(PipelineConfig()).items():
    entries.append((name, [run_pipeline(dataset, cfg, out_dir=out / name.replace(" ", "_"))]))
entries.append(("random erasing", [run_baseline(dataset, PerturbationConfig(method="random_erasing"), out / "re")]))

rows = compare_configs(entries, dataset, FakeScorer(), TrainConfig(epochs=15, milestones=(8, 12)),
                       seeds=[0, 1, 2], cache=FeatureCache())
print()
print(format_table(rows))
print("\nThe fake backends carry no semantics, so these numbers only exercise the harness.")
