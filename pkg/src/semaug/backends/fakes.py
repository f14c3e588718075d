"""Deterministic CPU stand-ins for the captioner, scorer and diffusion model.

They are cheap pure functions of their inputs so that full pipeline runs can
be tested byte-for-byte.
"""

from __future__ import annotations

import zlib
from typing import Any, Sequence

import numpy as np

from .._seeding import stable_text_hash
from ..errors import BadNoiseRate, EmptyText, MissingImage, UnsupportedMode
from .base import CaptionerCapabilities, prompt_text

FEATURE_DIM = 64
GRID = 8

_UNIFORM = np.full(FEATURE_DIM, 1.0 / np.sqrt(FEATURE_DIM))


def _grid_edges(n: int) -> list[tuple[int, int]]:
    edges = []
    for i in range(GRID):
        start = (i * n) // GRID
        end = max(start + 1, ((i + 1) * n) // GRID)
        edges.append((start, end))
    return edges


def fake_image_feature(image: np.ndarray) -> np.ndarray:
    """Mean-pool the grayscale image onto an 8x8 grid, flatten, L2-normalize.

    Grayscale is the unweighted channel mean. An all-black image falls back to
    the uniform unit vector.
    """
    gray = np.asarray(image, dtype=np.float64)
    if gray.ndim == 3:
        gray = gray.mean(axis=2)
    h, w = gray.shape
    pooled = np.array(
        [gray[r0:r1, c0:c1].mean() for r0, r1 in _grid_edges(h) for c0, c1 in _grid_edges(w)]
    )
    norm = np.linalg.norm(pooled)
    if norm == 0.0:
        return _UNIFORM.copy()
    return pooled / norm


def _ngram_bin(gram: bytes) -> int:
    return zlib.crc32(gram) % FEATURE_DIM


def fake_text_feature(text: str) -> np.ndarray:
    """Hash case-folded byte 3-grams into 64 bins, count, L2-normalize.

    Texts shorter than three bytes contribute a single gram (the whole text).
    """
    if not text:
        raise EmptyText("text must be non-empty")
    data = text.casefold().encode("utf-8")
    grams = [data[i : i + 3] for i in range(len(data) - 2)] or [data]
    counts = np.zeros(FEATURE_DIM)
    for gram in grams:
        counts[_ngram_bin(gram)] += 1.0
    return counts / np.linalg.norm(counts)


class FakeScorer:
    backend_id = "fake"
    dim = FEATURE_DIM
    similarity_range = (0.0, 1.0)
    max_concurrency = 64

    def image_features(self, image: np.ndarray) -> np.ndarray:
        return fake_image_feature(image)

    def text_features(self, text: str) -> np.ndarray:
        return fake_text_feature(text)

    def image_text_similarity(self, image: np.ndarray, texts: Sequence[str]) -> list[float]:
        feat = fake_image_feature(image)
        return [float(feat @ fake_text_feature(t)) for t in texts]

    def image_image_similarity(self, a: np.ndarray, b: np.ndarray) -> float:
        return float(fake_image_feature(a) @ fake_image_feature(b))


_DESCRIPTORS = (
    "bright", "dark", "small", "large", "centered", "blurry", "colorful", "plain",
    "close", "distant", "textured", "smooth", "on", "a", "simple", "background",
)
_MODE_CODES = {"beam": 0, "nucleus": 1}


def _color_word(image: np.ndarray) -> str:
    means = np.asarray(image, dtype=np.float64).reshape(-1, 3).mean(axis=0)
    if means.max() - means.min() < 20:
        return "gray"
    return ("reddish", "greenish", "bluish")[int(np.argmax(means))]


def fake_captioner(image: np.ndarray, config: Any, seed: int, hint: str | None = None) -> list[str]:
    """Template captions ``a synthetic photo of <hint> ... variant <i>``.

    Beam mode emits the bare template; nucleus mode inserts 1-4 seeded
    descriptor words. Lengths (whitespace tokens) are clamped into
    ``[config.min_len, config.max_len]``.
    """
    if config.mode not in _MODE_CODES:
        raise UnsupportedMode(f"fake captioner has no mode {config.mode!r}")
    hint_tokens = (hint or _color_word(image)).lower().split()
    captions = []
    for i in range(config.count):
        rng = np.random.default_rng([seed, i, _MODE_CODES[config.mode]])
        body = ["a", "synthetic", "photo", "of", *hint_tokens]
        if config.mode == "nucleus":
            k = int(rng.integers(1, 5))
            body += [str(w) for w in rng.choice(_DESCRIPTORS, size=k)]
        tail = ["variant", str(i)]
        room = max(config.max_len - len(tail), 1)
        body = body[:room]
        while len(body) + len(tail) < config.min_len:
            body.append(str(rng.choice(_DESCRIPTORS)))
        captions.append(" ".join(body + tail))
    return captions


class FakeCaptioner:
    backend_id = "fake"
    capabilities = CaptionerCapabilities(modes=frozenset(_MODE_CODES), max_count=1000, min_len=3, max_len=64)
    max_concurrency = 64

    def caption(self, image: np.ndarray, config: Any, seed: int, hint: str | None = None) -> list[str]:
        return fake_captioner(image, config, seed, hint=hint)


def fake_noise(seed: int, prompt: str, shape: tuple[int, int, int]) -> np.ndarray:
    rng = np.random.default_rng([seed, stable_text_hash(prompt)])
    return rng.integers(0, 256, size=shape, dtype=np.uint8)


def fake_diffusion(
    image: np.ndarray | None,
    prompt: Any,
    guidance: float,
    noise_rate: float,
    seed: int,
    size: tuple[int, int] = (32, 32),
) -> np.ndarray:
    """``(1 - n) * x + n * N`` with N seeded by ``(seed, hash(prompt))``.

    Without an input image the output is N itself at ``size`` (H, W).
    ``guidance`` is accepted and ignored.
    """
    if not 0.0 <= noise_rate <= 1.0:
        raise BadNoiseRate(f"noise_rate {noise_rate} outside [0, 1]")
    text = prompt_text(prompt)
    if image is None:
        return fake_noise(seed, text, (size[0], size[1], 3))
    x = np.asarray(image, dtype=np.uint8)
    noise = fake_noise(seed, text, x.shape).astype(np.float64)
    out = (1.0 - noise_rate) * x.astype(np.float64) + noise_rate * noise
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


class FakeDiffusion:
    backend_id = "fake"
    modes = frozenset({"img2img", "text2img"})
    max_concurrency = 64

    def generate(
        self,
        image: np.ndarray | None,
        prompt: Any,
        guidance: float,
        noise_rate: float,
        seed: int,
        steps: int = 100,
        size: tuple[int, int] | None = None,
        mode: str | None = None,
    ) -> np.ndarray:
        if mode == "img2img" and image is None:
            raise MissingImage("img2img generation needs a source image")
        return fake_diffusion(image, prompt, guidance, noise_rate, seed, size=size or (32, 32))
