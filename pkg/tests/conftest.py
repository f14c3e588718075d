from pathlib import Path

import numpy as np
import pytest

from semaug.backends import FakeCaptioner, FakeDiffusion, FakeScorer
from semaug.dataset import scan_dataset
from semaug.generation import Backends
from semaug.imaging import write_png
from semaug.synthetic import make_synthetic_dataset


@pytest.fixture(scope="session")
def synthetic_root(tmp_path_factory) -> Path:
    return make_synthetic_dataset(tmp_path_factory.mktemp("synthetic") / "data")


@pytest.fixture(scope="session")
def synthetic_dataset(synthetic_root):
    return scan_dataset(synthetic_root)


@pytest.fixture
def fakes() -> Backends:
    return Backends(FakeCaptioner(), FakeScorer(), FakeDiffusion())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_dataset_root(tmp_path):
    """labels {cat, dog}, two 16x16 images each."""
    root = tmp_path / "tiny"
    gen = np.random.default_rng(0)
    for label in ("cat", "dog"):
        for i in range(2):
            write_png(root / label / f"{i}.png", gen.integers(0, 256, size=(16, 16, 3), dtype=np.uint8))
    return root
