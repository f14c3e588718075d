"""The perturbation baselines used for comparison: Random Erasing, CutMix and
RandAugment, called directly and as stored runs.

    python3 demos/04_baselines.py [out_dir]
"""

from __future__ import annotations

import sys
import tempfile
from pathlib import Path

import numpy as np

from semaug.backends import FakeScorer
from semaug.baselines import (
    CutMixParams,
    PerturbationConfig,
    RandAugmentParams,
    RandomErasingParams,
    cutmix,
    rand_augment,
    random_erasing,
    run_baseline,
)
from semaug.dataset import scan_dataset
from semaug.evaluation import per_label_similarity
from semaug.synthetic import make_synthetic_dataset

rng = np.random.default_rng(0)
a = rng.integers(0, 256, size=(32, 32, 3), dtype=np.uint8)
b = rng.integers(0, 256, size=(32, 32, 3), dtype=np.uint8)

erased = random_erasing(a, RandomErasingParams(p=1.0, s_l=0.25, s_h=0.25, r1=1.0), rng)
print("random erasing changed", int((erased != a).any(axis=2).sum()), "of 1024 pixels")

mixed, label = cutmix(a, 0, b, 1, CutMixParams(), rng, num_classes=2, lam=0.64, center=(16, 16))
print("cutmix with lambda 0.64 on 32x32 -> soft label", label, "(19x19 box pasted)")

augmented = rand_augment(a, RandAugmentParams(N=2, M=9), rng)
print("randaugment mean absolute change", float(np.abs(augmented.astype(int) - a).mean()))

out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="semaug-demo-"))
dataset = scan_dataset(make_synthetic_dataset(out / "data"))
print("\nStored runs and their similarity to the originals:")
for method in ("random_erasing", "cutmix", "randaugment"):
    manifest = run_baseline(dataset, PerturbationConfig(method=method, seed=0), out / method)
    sim = per_label_similarity(manifest, dataset, FakeScorer(), k=1)
    print(f"  {method:<15} {len(manifest.records)} images, overall similarity {sim.overall:.4f}")
