"""Pipeline configuration, config hashing and ablation config builders."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

from ._seeding import canonical_hash
from .captioning import DEFAULT_SAMPLING, STRATEGIES, SamplingConfig
from .errors import ValidationError
from .prompting import DEFAULT_CAPTION_WEIGHT, DEFAULT_LABEL_WEIGHT, PROMPT_MODES, GuidanceConfig
from .trainer import TrainConfig

NOISE_GRID = (0.3, 0.5, 0.7)
FILTER_KINDS = ("label", "prompt", "original")

# fields that never influence output bytes, so they stay out of the config hash
RUNTIME_FIELDS = frozenset({"out_dir", "caption_cache", "workers", "use_cache", "log_file"})


class ConfigParse(ValidationError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    global_seed: int = 0
    backends: dict[str, str] = field(default_factory=lambda: {"caption": "fake", "score": "fake", "generate": "fake"})
    backend_options: dict[str, dict[str, Any]] = field(default_factory=dict)
    sampling: tuple[SamplingConfig, ...] = DEFAULT_SAMPLING
    selection_strategy: str = "random"
    random_pool: str | None = "nucleus"
    caption_hint: str = "label"  # label | none; only fakes use the hint
    prompt_mode: str = "full"
    bracket_mode: bool = False
    w_l: float = DEFAULT_LABEL_WEIGHT
    w_c: float = DEFAULT_CAPTION_WEIGHT
    renormalize: bool = False
    guidance: GuidanceConfig = GuidanceConfig()
    noise_rate: float = 0.5
    noise_grid: tuple[float, ...] = NOISE_GRID
    denoising_steps: int = 100
    k_augment: int = 1
    generation_mode: str = "img2img"
    output_size: tuple[int, int] | None = None
    augment_splits: tuple[str, ...] | None = ("train",)
    filters: tuple[str, ...] = ()
    retries: int = 2
    trainer: TrainConfig = TrainConfig()
    out_dir: str = "runs/augment"
    caption_cache: str | None = None
    workers: int = 1
    use_cache: bool = True
    log_file: str | None = None

    def validate(self) -> None:
        from .backends import registered_backends

        for role in ("caption", "score", "generate"):
            if role not in self.backends:
                raise ValidationError(f"no backend configured for role {role!r}")
            if (role, self.backends[role]) not in registered_backends(role):
                raise ValidationError(f"unknown {role} backend {self.backends[role]!r}")
        if not self.sampling:
            raise ValidationError("at least one sampling config is required")
        for s in self.sampling:
            s.validate()
        if self.selection_strategy not in STRATEGIES:
            raise ValidationError(f"unknown selection strategy {self.selection_strategy!r}")
        if self.prompt_mode not in PROMPT_MODES:
            raise ValidationError(f"unknown prompt mode {self.prompt_mode!r}")
        if self.caption_hint not in ("label", "none"):
            raise ValidationError("caption_hint must be 'label' or 'none'")
        if self.w_l <= 0 or self.w_c <= 0:
            raise ValidationError("prompt weights must be positive")
        self.guidance.validate()
        if not 0.0 <= self.noise_rate <= 1.0:
            raise ValidationError(f"noise_rate {self.noise_rate} outside [0, 1]")
        if self.denoising_steps < 1 or self.k_augment < 1 or self.workers < 1 or self.retries < 0:
            raise ValidationError("denoising_steps, k_augment and workers must be >= 1, retries >= 0")
        if self.generation_mode not in ("img2img", "text2img"):
            raise ValidationError(f"unknown generation mode {self.generation_mode!r}")
        for kind in self.filters:
            if kind not in FILTER_KINDS:
                raise ValidationError(f"unknown filter {kind!r}")
        self.trainer.validate()

    def to_dict(self) -> dict:
        data = asdict(self)
        data["sampling"] = [asdict(s) for s in self.sampling]
        return data

    def hashed_dict(self) -> dict:
        return {k: v for k, v in self.to_dict().items() if k not in RUNTIME_FIELDS}

    def config_hash(self) -> str:
        return canonical_hash(self.hashed_dict())

    def caption_fingerprint(self) -> str:
        d = self.to_dict()
        keys = ("global_seed", "sampling", "selection_strategy", "random_pool", "caption_hint")
        return canonical_hash({"backends": [self.backends["caption"], self.backends["score"]],
                               **{k: d[k] for k in keys}})

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigParse(f"unknown config field(s): {sorted(unknown)}")
        data = dict(data)
        try:
            if "sampling" in data:
                data["sampling"] = tuple(SamplingConfig(**s) for s in data["sampling"])
            if "guidance" in data:
                data["guidance"] = GuidanceConfig(**data["guidance"])
            if "trainer" in data:
                data["trainer"] = TrainConfig.from_dict(data["trainer"])
            if "backends" in data:
                data["backends"] = {**cls().backends, **data["backends"]}
            for key in ("noise_grid", "filters", "augment_splits", "output_size"):
                if data.get(key) is not None:
                    data[key] = tuple(data[key])
            return cls(**data)
        except TypeError as exc:
            raise ConfigParse(f"malformed config: {exc}") from exc

    def with_overrides(self, **overrides: Any) -> "PipelineConfig":
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})


def load_config(path: str | os.PathLike | None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigParse(f"cannot parse config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigParse("config root must be a JSON object")
    return PipelineConfig.from_dict(data)


def save_config(config: PipelineConfig, path: str | os.PathLike) -> None:
    Path(path).write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def prompt_mode_ablation(base: PipelineConfig) -> dict[str, PipelineConfig]:
    """The four prompt settings: no prompt, caption only, label only, complete prompt."""
    return {
        "w/o prompt": replace(base, prompt_mode="none"),
        "caption only": replace(base, prompt_mode="caption_only"),
        "label only": replace(base, prompt_mode="label_only"),
        "complete prompt": replace(base, prompt_mode="full"),
    }


def caption_weighting_ablation(base: PipelineConfig) -> dict[str, PipelineConfig]:
    """Beam / nucleus / caption filter, each with and without prompt weighting."""
    selection = {
        "beam": dict(selection_strategy="random", random_pool="beam"),
        "nucleus": dict(selection_strategy="random", random_pool="nucleus"),
        "caption filter": dict(selection_strategy="clip_filter", random_pool=None),
    }
    out = {}
    for name, sel in selection.items():
        out[f"{name} + PW"] = replace(base, **sel)
        out[f"{name} w/o PW"] = replace(base, w_l=1.0, w_c=1.0, **sel)
    return out


def noise_guidance_sweep(
    base: PipelineConfig,
    noise_rates: tuple[float, ...] = NOISE_GRID,
    guidance_values: tuple[float, ...] | None = None,
) -> dict[str, PipelineConfig]:
    """Grid over noise rate and, optionally, constant guidance scales."""
    out = {}
    for n in noise_rates:
        if guidance_values is None:
            out[f"n={n}"] = replace(base, noise_rate=n)
        else:
            for g in guidance_values:
                out[f"n={n},g={g}"] = replace(base, noise_rate=n,
                                              guidance=GuidanceConfig(mapping="constant", constant_value=g))
    return out
