"""Prompt construction, prompt weighting and guidance mapping.

A prompt is the label sentence ``"A picture of a <label>"`` joined with the
selected caption. Token embeddings of the label sentence and of the caption
can be scaled separately, and the caption-image similarity is mapped to the
diffusion guidance scale with a concave quadratic.
"""

from __future__ import annotations

import math
import re
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .errors import EmptyLabel, MissingCaption, OutOfRange, SpanMismatch, ValidationError

PROMPT_MODES = ("none", "label_only", "caption_only", "full")
LABEL_PREFIX = "A picture of a "
SEPARATOR = ", "
TERMINATOR = "."

DEFAULT_LABEL_WEIGHT = 1.50
DEFAULT_CAPTION_WEIGHT = 0.90

# span ids used in token-level span maps
OTHER, LABEL, CAPTION = 0, 1, 2
BOS, EOS = "<|startoftext|>", "<|endoftext|>"

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


def make_label_text(label_text: str, bracket_mode: bool = False) -> str:
    if not label_text or not label_text.strip():
        raise EmptyLabel("label text must be non-empty")
    label = label_text.strip()
    return LABEL_PREFIX + (f"[{label}]" if bracket_mode else label)


def _clean_caption(caption: str) -> str:
    return caption.strip().rstrip(".").rstrip()


@dataclass(frozen=True)
class WeightedPrompt:
    label_text: str | None
    caption_text: str | None
    prompt_mode: str
    bracket_mode: bool
    rendered_text: str
    label_span: tuple[int, int] | None  # character range in rendered_text
    caption_span: tuple[int, int] | None
    w_l: float = DEFAULT_LABEL_WEIGHT
    w_c: float = DEFAULT_CAPTION_WEIGHT
    renormalize: bool = False

    def tokens(self) -> list[tuple[str, int, int]]:
        """Word/punctuation tokens with character offsets, wrapped in BOS/EOS markers."""
        body = [(m.group(), m.start(), m.end()) for m in _TOKEN_RE.finditer(self.rendered_text)]
        return [(BOS, 0, 0), *body, (EOS, 0, 0)]

    def span_ids_for_offsets(self, offsets: Sequence[tuple[int, int]]) -> np.ndarray:
        """Assign each token (given as char offsets) to LABEL, CAPTION or OTHER.

        Zero-width offsets are special tokens and map to OTHER. Works with any
        tokenizer that reports offsets into ``rendered_text``.
        """
        ids = np.full(len(offsets), OTHER, dtype=np.int64)
        for i, (start, end) in enumerate(offsets):
            if end <= start:
                continue
            if self.label_span and self.label_span[0] <= start and end <= self.label_span[1]:
                ids[i] = LABEL
            elif self.caption_span and self.caption_span[0] <= start and end <= self.caption_span[1]:
                ids[i] = CAPTION
        return ids

    def span_ids(self) -> np.ndarray:
        return self.span_ids_for_offsets([(s, e) for _, s, e in self.tokens()])

    def to_wire(self) -> dict:
        data = asdict(self)
        data["label_span"] = list(self.label_span) if self.label_span else None
        data["caption_span"] = list(self.caption_span) if self.caption_span else None
        return data

    @classmethod
    def from_wire(cls, data: dict) -> "WeightedPrompt":
        data = dict(data)
        for key in ("label_span", "caption_span"):
            if data.get(key) is not None:
                data[key] = tuple(data[key])
        return cls(**data)


def build_prompt(
    label_text: str | None,
    caption: str | None,
    prompt_mode: str = "full",
    bracket_mode: bool = False,
    w_l: float = DEFAULT_LABEL_WEIGHT,
    w_c: float = DEFAULT_CAPTION_WEIGHT,
    renormalize: bool = False,
) -> WeightedPrompt:
    """Render the prompt for one of the four prompt modes.

    ``full``: ``<label sentence>, <caption>.``; ``label_only``: ``<label sentence>.``;
    ``caption_only``: ``<caption>.``; ``none``: the empty string.
    """
    if prompt_mode not in PROMPT_MODES:
        raise ValidationError(f"unknown prompt mode {prompt_mode!r}")
    if w_l <= 0 or w_c <= 0:
        raise ValidationError("prompt weights must be positive")
    needs_caption = prompt_mode in ("caption_only", "full")
    if needs_caption and (caption is None or not _clean_caption(caption)):
        raise MissingCaption(f"prompt mode {prompt_mode!r} needs a caption")

    label_span = caption_span = None
    if prompt_mode == "none":
        text = ""
    elif prompt_mode == "label_only":
        sentence = make_label_text(label_text or "", bracket_mode)
        text = sentence + TERMINATOR
        label_span = (0, len(sentence))
    elif prompt_mode == "caption_only":
        cap = _clean_caption(caption)
        text = cap + TERMINATOR
        caption_span = (0, len(cap))
    else:
        sentence = make_label_text(label_text or "", bracket_mode)
        cap = _clean_caption(caption)
        text = sentence + SEPARATOR + cap + TERMINATOR
        label_span = (0, len(sentence))
        start = len(sentence) + len(SEPARATOR)
        caption_span = (start, start + len(cap))
    return WeightedPrompt(
        label_text=label_text if prompt_mode in ("label_only", "full") else None,
        caption_text=_clean_caption(caption) if needs_caption else None,
        prompt_mode=prompt_mode,
        bracket_mode=bracket_mode,
        rendered_text=text,
        label_span=label_span,
        caption_span=caption_span,
        w_l=float(w_l),
        w_c=float(w_c),
        renormalize=renormalize,
    )


def parse_prompt(rendered_text: str, bracket_mode: bool = False) -> tuple[str, str]:
    """Recover ``(label, caption)`` from a ``full``-mode rendering."""
    if not rendered_text.startswith(LABEL_PREFIX) or not rendered_text.endswith(TERMINATOR):
        raise ValidationError("not a full-mode prompt")
    body = rendered_text[len(LABEL_PREFIX) : -len(TERMINATOR)]
    if bracket_mode:
        if not body.startswith("["):
            raise ValidationError("missing label bracket")
        label, sep, caption = body[1:].partition("]" + SEPARATOR)
    else:
        label, sep, caption = body.partition(SEPARATOR)
    if not sep:
        raise ValidationError("missing label/caption separator")
    return label, caption


def weight_embeddings(
    token_embeddings: np.ndarray,
    span_map: Sequence[int] | np.ndarray,
    w_l: float = DEFAULT_LABEL_WEIGHT,
    w_c: float = DEFAULT_CAPTION_WEIGHT,
    renormalize: bool = False,
) -> np.ndarray:
    """Scale label-span rows by ``w_l`` and caption-span rows by ``w_c``.

    Rows outside both spans keep weight 1. With ``renormalize`` the result is
    rescaled so that its mean row norm equals the input's.
    """
    emb = np.asarray(token_embeddings, dtype=np.float64)
    ids = np.asarray(span_map)
    if emb.ndim != 2 or ids.shape != (emb.shape[0],):
        raise SpanMismatch(f"{emb.shape[0] if emb.ndim else 0} embeddings vs {ids.shape} span ids")
    scale = np.ones(len(ids))
    scale[ids == LABEL] = w_l
    scale[ids == CAPTION] = w_c
    out = emb * scale[:, None]
    if renormalize:
        before = np.linalg.norm(emb, axis=1).mean()
        after = np.linalg.norm(out, axis=1).mean()
        if after > 0:
            out = out * (before / after)
    return out


@dataclass(frozen=True)
class GuidanceConfig:
    mapping: str = "quadratic"
    constant_value: float = 7.5
    floor: float | None = None
    record_raw: bool = True

    def validate(self) -> None:
        if self.mapping not in ("quadratic", "constant"):
            raise ValidationError(f"unknown guidance mapping {self.mapping!r}")


def quadratic_guidance(s_star: float) -> float:
    """``-4 s^2 + 2 s + 1``: peaks at 1.25 for s = 0.25, equals 1 at s = 0 and s = 0.5."""
    return -4.0 * s_star * s_star + 2.0 * s_star + 1.0


def guidance_scale(s_star: float, config: GuidanceConfig | None = None) -> tuple[float, float]:
    """Return ``(g_raw, g_applied)``; the floor, if any, only affects ``g_applied``."""
    config = config or GuidanceConfig()
    config.validate()
    s = float(s_star)
    if not math.isfinite(s) or not -1.0 <= s <= 1.0:
        raise OutOfRange(f"similarity {s_star} outside [-1, 1]")
    g_raw = quadratic_guidance(s) if config.mapping == "quadratic" else float(config.constant_value)
    g_applied = g_raw if config.floor is None else max(g_raw, float(config.floor))
    return g_raw, g_applied
