"""Candidate caption generation, caption scoring and caption selection."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ._seeding import derive_seed
from .errors import BackendFailure, EmptySet, UnsupportedMode, ValidationError

SAMPLING_MODES = ("beam", "nucleus")
STRATEGIES = ("random", "clip_filter")


@dataclass(frozen=True)
class SamplingConfig:
    mode: str = "nucleus"
    count: int = 10
    nucleus_p: float = 0.9
    beam_width: int = 3
    min_len: int = 5
    max_len: int = 20

    def validate(self) -> None:
        if self.mode not in SAMPLING_MODES:
            raise UnsupportedMode(f"unknown sampling mode {self.mode!r}")
        if self.count < 1:
            raise ValidationError(f"caption count must be >= 1, got {self.count}")
        if not 0.0 < self.nucleus_p <= 1.0:
            raise ValidationError(f"nucleus_p must be in (0, 1], got {self.nucleus_p}")
        if self.beam_width < 1:
            raise ValidationError("beam_width must be >= 1")
        if not 1 <= self.min_len <= self.max_len:
            raise ValidationError(f"bad length bounds {self.min_len}..{self.max_len}")


DEFAULT_SAMPLING = (SamplingConfig(mode="beam"), SamplingConfig(mode="nucleus"))


@dataclass(frozen=True)
class ScoredCaption:
    text: str
    similarity: float
    mode: str


@dataclass
class ScoredCaptionSet:
    record_id: str
    captions: list[ScoredCaption]
    selection_strategy: str
    chosen_index: int
    seed: int
    random_pool: str | None = None

    @property
    def chosen(self) -> tuple[str, float]:
        c = self.captions[self.chosen_index]
        return c.text, c.similarity

    @property
    def c_star(self) -> str:
        return self.captions[self.chosen_index].text

    @property
    def s_star(self) -> float:
        return self.captions[self.chosen_index].similarity

    def to_cache_line(self) -> dict:
        return {
            "record_id": self.record_id,
            "mode": "+".join(dict.fromkeys(c.mode for c in self.captions)),
            "captions": [c.text for c in self.captions],
            "caption_modes": [c.mode for c in self.captions],
            "scores": [c.similarity for c in self.captions],
            "chosen": self.chosen_index,
            "c_star": self.c_star,
            "s_star": self.s_star,
            "strategy": self.selection_strategy,
            "random_pool": self.random_pool,
            "seed": self.seed,
        }

    @classmethod
    def from_cache_line(cls, line: dict) -> "ScoredCaptionSet":
        caps = [
            ScoredCaption(t, float(s), m)
            for t, s, m in zip(line["captions"], line["scores"], line["caption_modes"])
        ]
        return cls(
            record_id=line["record_id"],
            captions=caps,
            selection_strategy=line["strategy"],
            chosen_index=int(line["chosen"]),
            seed=int(line["seed"]),
            random_pool=line.get("random_pool"),
        )


def generate_captions(
    image: np.ndarray,
    configs: Sequence[SamplingConfig],
    seed: int,
    captioner,
    hint: str | None = None,
) -> list[tuple[str, str]]:
    """Run every sampling config in order and return ``(caption, mode)`` pairs.

    All configs are validated before the backend is called.
    """
    if not configs:
        raise ValidationError("at least one sampling config is required")
    caps = captioner.capabilities
    for cfg in configs:
        cfg.validate()
        if cfg.mode not in caps.modes:
            raise UnsupportedMode(f"backend {captioner.backend_id!r} lacks mode {cfg.mode!r}")
        if cfg.count > caps.max_count:
            raise ValidationError(f"backend caps caption count at {caps.max_count}")
    out: list[tuple[str, str]] = []
    for i, cfg in enumerate(configs):
        try:
            texts = captioner.caption(image, cfg, derive_seed(seed, i, cfg.mode), hint=hint)
        except (UnsupportedMode, ValidationError):
            raise
        except Exception as exc:
            raise BackendFailure(f"captioner failed: {exc}") from exc
        if len(texts) != cfg.count:
            raise BackendFailure(f"captioner returned {len(texts)} captions, expected {cfg.count}")
        out.extend((t, cfg.mode) for t in texts)
    return out


def score_captions(image: np.ndarray, captions: Sequence[str], scorer) -> list[float]:
    if not captions:
        raise EmptySet("no captions to score")
    try:
        scores = [float(s) for s in scorer.image_text_similarity(image, list(captions))]
    except Exception as exc:
        raise BackendFailure(f"scorer failed: {exc}") from exc
    if len(scores) != len(captions):
        raise BackendFailure("scorer returned a misaligned score list")
    return scores


def select_caption(
    scores: Sequence[float],
    strategy: str = "clip_filter",
    seed: int = 0,
    pool: Sequence[int] | None = None,
) -> int:
    """Index of the chosen caption.

    ``clip_filter`` takes the first index of the maximum score. ``random``
    draws uniformly (seeded) from ``pool``, or from all indices.
    """
    if len(scores) == 0:
        raise EmptySet("cannot select from an empty caption set")
    if strategy == "clip_filter":
        return int(np.argmax(np.asarray(scores, dtype=np.float64)))
    if strategy == "random":
        candidates = list(range(len(scores))) if pool is None else list(pool)
        if not candidates:
            raise EmptySet("random selection pool is empty")
        rng = np.random.default_rng(seed)
        return candidates[int(rng.integers(len(candidates)))]
    raise ValidationError(f"unknown selection strategy {strategy!r}")


def caption_record(
    record_id: str,
    image: np.ndarray,
    configs: Sequence[SamplingConfig],
    captioner,
    scorer,
    strategy: str = "random",
    seed: int = 0,
    random_pool: str | None = "nucleus",
    hint: str | None = None,
) -> ScoredCaptionSet:
    """Generate, score and select captions for one image.

    ``clip_filter`` selects over the pooled captions of every config;
    ``random`` draws from the captions produced by the ``random_pool`` mode
    (all captions when ``random_pool`` is None or not configured).
    """
    pairs = generate_captions(image, configs, seed, captioner, hint=hint)
    texts = [t for t, _ in pairs]
    scores = score_captions(image, texts, scorer)
    lo, hi = getattr(scorer, "similarity_range", (-1.0, 1.0))
    if any(not lo - 1e-9 <= s <= hi + 1e-9 for s in scores):
        raise BackendFailure(f"scores outside declared range [{lo}, {hi}]")
    pool = None
    if strategy == "random" and random_pool is not None:
        pool = [i for i, (_, m) in enumerate(pairs) if m == random_pool] or None
    index = select_caption(scores, strategy, derive_seed(seed, "select"), pool)
    return ScoredCaptionSet(
        record_id=record_id,
        captions=[ScoredCaption(t, s, m) for (t, m), s in zip(pairs, scores)],
        selection_strategy=strategy,
        chosen_index=index,
        seed=seed,
        random_pool=random_pool if strategy == "random" else None,
    )


@dataclass
class CaptionCache:
    """JSONL cache of caption sets keyed by ``(record_id, seed, fingerprint)``."""

    path: Path | None
    fingerprint: str = ""
    entries: dict[str, dict] = field(default_factory=dict)

    @classmethod
    def load(cls, path: str | os.PathLike | None, fingerprint: str = "") -> "CaptionCache":
        cache = cls(Path(path) if path else None, fingerprint)
        if cache.path and cache.path.is_file():
            for raw in cache.path.read_text(encoding="utf-8").splitlines():
                if raw.strip():
                    line = json.loads(raw)
                    if line.get("fingerprint") == fingerprint:
                        cache.entries[line["record_id"]] = line
        return cache

    def get(self, record_id: str, seed: int) -> ScoredCaptionSet | None:
        line = self.entries.get(record_id)
        if line is None or int(line["seed"]) != seed:
            return None
        return ScoredCaptionSet.from_cache_line(line)

    def put(self, scored: ScoredCaptionSet) -> None:
        line = scored.to_cache_line()
        line["fingerprint"] = self.fingerprint
        self.entries[scored.record_id] = line

    def save(self) -> None:
        if self.path is None:
            return
        self.path.parent.mkdir(parents=True, exist_ok=True)
        tmp = self.path.with_name(self.path.name + ".tmp")
        with open(tmp, "w", encoding="utf-8") as f:
            for key in sorted(self.entries):
                f.write(json.dumps(self.entries[key], sort_keys=True) + "\n")
        os.replace(tmp, self.path)


def sampling_to_dict(configs: Sequence[SamplingConfig]) -> list[dict]:
    return [asdict(c) for c in configs]
