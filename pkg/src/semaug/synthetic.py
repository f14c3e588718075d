"""Small procedurally generated labeled image sets for desk-scale runs."""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from .imaging import write_png

SYNTHETIC_LABELS = ("red_disc", "green_square", "blue_stripes")


def _draw(label: str, size: int, rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    background = rng.integers(20, 90, size=3)
    img = np.empty((size, size, 3), dtype=np.float64)
    img[:] = background
    jitter = rng.integers(-25, 26, size=3)
    if label == "red_disc":
        cy, cx = rng.uniform(0.35, 0.65, size=2) * size
        radius = rng.uniform(0.2, 0.32) * size
        mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= radius**2
        img[mask] = np.array([220, 40, 40]) + jitter
    elif label == "green_square":
        side = int(rng.uniform(0.35, 0.55) * size)
        y0, x0 = rng.integers(0, size - side, size=2)
        img[y0 : y0 + side, x0 : x0 + side] = np.array([40, 200, 60]) + jitter
    elif label == "blue_stripes":
        period = int(rng.integers(4, 8))
        phase = int(rng.integers(0, period))
        mask = ((xx + phase) // (period // 2 or 1)) % 2 == 0
        img[mask] = np.array([40, 60, 220]) + jitter
    else:
        raise ValueError(f"unknown synthetic label {label!r}")
    img += rng.normal(0.0, 6.0, size=img.shape)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def synthetic_images(label: str, count: int, size: int = 32, seed: int = 0) -> list[np.ndarray]:
    rng = np.random.default_rng([seed, SYNTHETIC_LABELS.index(label) if label in SYNTHETIC_LABELS else 99])
    return [_draw(label, size, rng) for _ in range(count)]


def make_synthetic_dataset(
    root: str | os.PathLike,
    labels: tuple[str, ...] = SYNTHETIC_LABELS,
    per_label: int = 10,
    size: int = 32,
    seed: int = 0,
) -> Path:
    """Write ``per_label`` PNGs for each label under ``root/<label>/``.

    Output bytes depend only on the arguments.
    """
    root = Path(root)
    for label in labels:
        for i, image in enumerate(synthetic_images(label, per_label, size=size, seed=seed)):
            path = root / label / f"{label}_{i:03d}.png"
            write_png(path, image)
            # fixed mtime keeps scan_dataset's created_at reproducible
            os.utime(path, (1_700_000_000, 1_700_000_000))
    return root
