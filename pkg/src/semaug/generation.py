"""Augmented image generation with full provenance.

One :class:`AugRecord` per generated image. Records are collected into an
:class:`AugmentationManifest`, stored as JSONL: a header line carrying the
config hash, then one line per record. Image paths are relative to the
manifest's directory so that a run directory can be moved or compared
byte-for-byte with another run.
"""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import TYPE_CHECKING, Any, Sequence

import numpy as np

from ._seeding import derive_seed
from .captioning import CaptionCache, ScoredCaptionSet, caption_record
from .dataset import DatasetManifest, ImageRecord, select_split
from .errors import (
    BackendFailure,
    DimensionMismatch,
    EmptyPrompt,
    ManifestIOError,
    MissingImage,
    SchemaMismatch,
    SemaugError,
    ValidationError,
)
from .imaging import load_rgb, sha256_file, write_png
from .prompting import WeightedPrompt, build_prompt, guidance_scale

if TYPE_CHECKING:
    from .config import PipelineConfig

logger = logging.getLogger(__name__)

FORMAT_VERSION = "1"
MANIFEST_NAME = "manifest.jsonl"
JOURNAL_NAME = "journal.jsonl"
JOURNAL_EVERY = 100
DEFAULT_RETRIES = 2
FILTER_STATES = ("pending", "kept", "dropped")


@dataclass(frozen=True)
class GenerationRequest:
    record_id: str
    label_raw: str
    prompt: WeightedPrompt
    g_raw: float
    g_applied: float
    noise_rate: float
    seed: int
    mode: str = "img2img"
    denoising_steps: int = 100
    backend_id: str = "fake"
    aug_index: int = 0
    output_size: tuple[int, int] | None = None  # (H, W), text2img only

    def validate(self) -> None:
        if self.mode not in ("img2img", "text2img"):
            raise ValidationError(f"unknown generation mode {self.mode!r}")
        if not 0.0 <= self.noise_rate <= 1.0:
            raise ValidationError(f"noise_rate {self.noise_rate} outside [0, 1]")
        if self.denoising_steps < 1:
            raise ValidationError("denoising_steps must be >= 1")


@dataclass(frozen=True)
class AugRecord:
    record_id: str
    aug_index: int
    label_raw: str
    label_text: str
    method: str
    backend_id: str
    mode: str
    source_path: str | None
    output_path: str | None
    checksum: str | None
    status: str = "ok"  # ok | failed
    error: str | None = None
    prompt: dict | None = None
    g_raw: float | None = None
    g_applied: float | None = None
    noise_rate: float | None = None
    denoising_steps: int | None = None
    seed: int | None = None
    c_star: str | None = None
    s_star: float | None = None
    strategy: str | None = None
    soft_label: dict[str, float] | None = None
    filter_status: str = "pending"
    filter_reason: str | None = None

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    @property
    def prompt_text(self) -> str | None:
        return None if self.prompt is None else self.prompt["rendered_text"]

    def with_filter(self, status: str, reason: str | None = None) -> "AugRecord":
        if status not in ("kept", "dropped"):
            raise ValidationError(f"bad filter status {status!r}")
        if self.filter_status != "pending":
            raise ValidationError(f"record {self.record_id}#{self.aug_index} already {self.filter_status}")
        return replace(self, filter_status=status, filter_reason=reason)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "AugRecord":
        return cls(**data)


@dataclass
class AugmentationManifest:
    header: dict
    records: list[AugRecord]
    root: Path | None = field(default=None, compare=False)

    @property
    def config_hash(self) -> str | None:
        return self.header.get("config_hash")

    def resolve(self, record: AugRecord) -> Path:
        if record.output_path is None:
            raise MissingImage(f"record {record.record_id}#{record.aug_index} has no output")
        if self.root is None:
            raise ValidationError("manifest root is unknown")
        return self.root / record.output_path

    def ok_records(self) -> list[AugRecord]:
        return [r for r in self.records if r.ok]

    def counts(self) -> dict[str, int]:
        out = {"kept": 0, "dropped": 0, "pending": 0, "failed": 0}
        for r in self.records:
            out["failed" if not r.ok else r.filter_status] += 1
        return out

    def dumps(self) -> str:
        lines = [json.dumps({"kind": "header", **self.header}, sort_keys=True)]
        lines += [json.dumps(r.to_dict(), sort_keys=True) for r in self.records]
        return "\n".join(lines) + "\n"

    def write(self, path: str | os.PathLike) -> Path:
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            tmp = path.with_name(path.name + ".tmp")
            tmp.write_text(self.dumps(), encoding="utf-8")
            os.replace(tmp, path)
        except OSError as exc:
            raise ManifestIOError(f"cannot write augmentation manifest {path}: {exc}") from exc
        return path

    @classmethod
    def read(cls, path: str | os.PathLike) -> "AugmentationManifest":
        path = Path(path)
        try:
            lines = [ln for ln in path.read_text(encoding="utf-8").splitlines() if ln.strip()]
        except OSError as exc:
            raise ManifestIOError(f"cannot read augmentation manifest {path}: {exc}") from exc
        if not lines:
            raise SchemaMismatch(f"{path} is empty")
        header = json.loads(lines[0])
        if header.pop("kind", None) != "header":
            raise SchemaMismatch(f"{path} has no header line")
        if str(header.get("format_version")) != FORMAT_VERSION:
            raise SchemaMismatch(f"unsupported format_version {header.get('format_version')!r}")
        records = [AugRecord.from_dict(json.loads(ln)) for ln in lines[1:]]
        return cls(header=header, records=records, root=path.parent)


def make_header(config_hash: str, method: str, config: dict | None = None, **extra: Any) -> dict:
    header = {"format_version": FORMAT_VERSION, "config_hash": config_hash, "method": method}
    if config is not None:
        header["config"] = config
    header.update(extra)
    return json.loads(json.dumps(header))  # tuples become lists, as after a reload


def output_relpath(label_raw: str, record_id: str, aug_index: int) -> str:
    return f"{label_raw}/{record_id}_{aug_index}.png"


def _call_with_retries(fn, retries: int):
    last: Exception | None = None
    for attempt in range(retries + 1):
        try:
            return fn()
        except (DimensionMismatch, ValidationError):
            raise
        except Exception as exc:  # backend errors are retried, then recorded
            last = exc
            logger.warning("generation attempt %d failed: %s", attempt + 1, exc)
    raise BackendFailure(str(last)) from last


def _record_from_request(request: GenerationRequest, label_text: str, method: str, source_path: str | None,
                         caption: ScoredCaptionSet | None, output_path: str | None, checksum: str | None,
                         status: str = "ok", error: str | None = None) -> AugRecord:
    return AugRecord(
        record_id=request.record_id,
        aug_index=request.aug_index,
        label_raw=request.label_raw,
        label_text=label_text,
        method=method,
        backend_id=request.backend_id,
        mode=request.mode,
        source_path=source_path,
        output_path=output_path,
        checksum=checksum,
        status=status,
        error=error,
        prompt=request.prompt.to_wire(),
        g_raw=request.g_raw,
        g_applied=request.g_applied,
        noise_rate=request.noise_rate,
        denoising_steps=request.denoising_steps,
        seed=request.seed,
        c_star=caption.c_star if caption else None,
        s_star=caption.s_star if caption else None,
        strategy=caption.selection_strategy if caption else None,
    )


def augment_image(
    request: GenerationRequest,
    source_image: np.ndarray,
    backend,
    out_dir: str | os.PathLike,
    label_text: str | None = None,
    source_path: str | None = None,
    caption: ScoredCaptionSet | None = None,
    method: str = "sgid",
    retries: int = DEFAULT_RETRIES,
) -> AugRecord:
    """img2img: write one augmented PNG under ``out_dir`` and return its record.

    Backend errors are retried ``retries`` times and then recorded as a
    failed record. A backend returning the wrong image size is a hard error.
    """
    request.validate()
    if request.mode != "img2img":
        raise ValidationError("augment_image handles img2img requests only")
    if source_image is None:
        raise MissingImage("img2img generation needs a source image")
    label_text = label_text or request.label_raw
    try:
        out = _call_with_retries(
            lambda: backend.generate(source_image, request.prompt, request.g_applied, request.noise_rate,
                                     request.seed, steps=request.denoising_steps, mode="img2img"),
            retries,
        )
    except BackendFailure as exc:
        return _record_from_request(request, label_text, method, source_path, caption, None, None,
                                    status="failed", error=str(exc))
    if out.shape != source_image.shape:
        raise DimensionMismatch(f"backend returned {out.shape}, source is {source_image.shape}")
    rel = output_relpath(request.label_raw, request.record_id, request.aug_index)
    checksum = write_png(Path(out_dir) / rel, out)
    return _record_from_request(request, label_text, method, source_path, caption, rel, checksum)


def text_to_image(
    request: GenerationRequest,
    backend,
    out_dir: str | os.PathLike,
    label_text: str | None = None,
    caption: ScoredCaptionSet | None = None,
    method: str = "text2img",
    retries: int = DEFAULT_RETRIES,
) -> AugRecord:
    """Generate from the prompt alone; the record has no source path."""
    request.validate()
    if request.mode != "text2img":
        raise ValidationError("text_to_image handles text2img requests only")
    if not request.prompt.rendered_text.strip():
        raise EmptyPrompt("text2img needs a non-empty prompt")
    label_text = label_text or request.label_raw
    size = request.output_size or (512, 512)
    try:
        out = _call_with_retries(
            lambda: backend.generate(None, request.prompt, request.g_applied, request.noise_rate, request.seed,
                                     steps=request.denoising_steps, size=size, mode="text2img"),
            retries,
        )
    except BackendFailure as exc:
        return _record_from_request(request, label_text, method, None, caption, None, None,
                                    status="failed", error=str(exc))
    rel = output_relpath(request.label_raw, request.record_id, request.aug_index)
    checksum = write_png(Path(out_dir) / rel, out)
    return _record_from_request(request, label_text, method, None, caption, rel, checksum)


@dataclass
class Backends:
    captioner: Any
    scorer: Any
    diffusion: Any

    @classmethod
    def from_config(cls, config: "PipelineConfig") -> "Backends":
        from .backends import create_backend

        opts = config.backend_options
        return cls(
            captioner=create_backend("caption", config.backends["caption"], **opts.get("caption", {})),
            scorer=create_backend("score", config.backends["score"], **opts.get("score", {})),
            diffusion=create_backend("generate", config.backends["generate"], **opts.get("generate", {})),
        )

    def max_concurrency(self) -> int:
        return min(int(getattr(b, "max_concurrency", 1)) for b in (self.captioner, self.scorer, self.diffusion))


def _process_record(record: ImageRecord, dataset: DatasetManifest, config: "PipelineConfig", backends: Backends,
                    cache: CaptionCache | None, out_dir: Path, method: str) -> tuple[list[AugRecord], ScoredCaptionSet | None]:
    seed = derive_seed(config.global_seed, record.record_id)
    source_path = record.source_path
    image = load_rgb(dataset.resolve(record))
    hint = record.label_text if config.caption_hint == "label" else None
    scored = cache.get(record.record_id, seed) if cache is not None else None
    fresh = scored is None
    if fresh:
        scored = caption_record(record.record_id, image, config.sampling, backends.captioner, backends.scorer,
                                strategy=config.selection_strategy, seed=seed, random_pool=config.random_pool,
                                hint=hint)
    prompt = build_prompt(record.label_text, scored.c_star, config.prompt_mode, config.bracket_mode,
                          config.w_l, config.w_c, config.renormalize)
    g_raw, g_applied = guidance_scale(scored.s_star, config.guidance)
    out: list[AugRecord] = []
    for k in range(config.k_augment):
        request = GenerationRequest(
            record_id=record.record_id,
            label_raw=record.label_raw,
            prompt=prompt,
            g_raw=g_raw,
            g_applied=g_applied,
            noise_rate=config.noise_rate,
            seed=derive_seed(config.global_seed, record.record_id, k),
            mode=config.generation_mode,
            denoising_steps=config.denoising_steps,
            backend_id=config.backends["generate"],
            aug_index=k,
            output_size=tuple(config.output_size) if config.output_size else (record.height, record.width),
        )
        if config.generation_mode == "img2img":
            rec = augment_image(request, image, backends.diffusion, out_dir, record.label_text, source_path,
                                scored, method=method, retries=config.retries)
        else:
            rec = text_to_image(request, backends.diffusion, out_dir, record.label_text, scored,
                                method=method, retries=config.retries)
        out.append(rec)
    return out, scored if fresh else None


def _failed_records(record: ImageRecord, config: "PipelineConfig", method: str, error: str) -> list[AugRecord]:
    return [
        AugRecord(
            record_id=record.record_id, aug_index=k, label_raw=record.label_raw, label_text=record.label_text,
            method=method, backend_id=config.backends["generate"], mode=config.generation_mode,
            source_path=record.source_path, output_path=None, checksum=None, status="failed", error=error,
            noise_rate=config.noise_rate, denoising_steps=config.denoising_steps,
            seed=derive_seed(config.global_seed, record.record_id, k),
        )
        for k in range(config.k_augment)
    ]


def _write_journal(path: Path, done: Sequence[str]) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text("".join(json.dumps({"record_id": r}) + "\n" for r in done), encoding="utf-8")
    os.replace(tmp, path)


def run_pipeline(
    dataset: DatasetManifest,
    config: "PipelineConfig",
    backends: Backends | None = None,
    out_dir: str | os.PathLike | None = None,
    workers: int | None = None,
    use_cache: bool | None = None,
    progress: bool = False,
) -> AugmentationManifest:
    """Caption, prompt, map guidance and generate for every selected record.

    Per-record seeds derive from ``(global_seed, record_id)``, so the worker
    count never changes an output byte. Per-record failures are recorded and
    do not abort the run; the manifest is written atomically at the end.
    """
    config.validate()
    backends = backends or Backends.from_config(config)
    out_dir = Path(out_dir or config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    workers = max(1, min(workers or config.workers, backends.max_concurrency()))
    use_cache = config.use_cache if use_cache is None else use_cache
    method = "sgid" if config.generation_mode == "img2img" else "text2img"
    cache = None
    if use_cache:
        cache_path = config.caption_cache or (out_dir / "captions.jsonl")
        cache = CaptionCache.load(cache_path, fingerprint=config.caption_fingerprint())

    records = select_split(dataset, config.augment_splits)
    results: dict[str, list[AugRecord]] = {}
    done: list[str] = []
    journal = out_dir / JOURNAL_NAME

    def work(record: ImageRecord):
        try:
            return record, *_process_record(record, dataset, config, backends, cache, out_dir, method)
        except (SemaugError, OSError) as exc:
            logger.warning(json.dumps({"event": "record_failed", "record_id": record.record_id, "error": str(exc)}))
            return record, _failed_records(record, config, method, str(exc)), None

    bar = None
    if progress:
        from tqdm import tqdm

        bar = tqdm(total=len(records), unit="img")
    with ThreadPoolExecutor(max_workers=workers) as pool:
        for record, recs, scored in pool.map(work, records):
            results[record.record_id] = recs
            if scored is not None and cache is not None:
                cache.put(scored)
            for r in recs:
                logger.info(json.dumps({"event": "generated" if r.ok else "failed", "record_id": r.record_id,
                                        "aug_index": r.aug_index, "checksum": r.checksum}, sort_keys=True))
            done.append(record.record_id)
            if len(done) % JOURNAL_EVERY == 0:
                _write_journal(journal, done)
            if bar is not None:
                bar.update(1)
    if bar is not None:
        bar.close()
    if cache is not None:
        cache.save()

    ordered = [r for record in records for r in results[record.record_id]]
    header = make_header(config.config_hash(), method, config.hashed_dict(), record_count=len(ordered))
    manifest = AugmentationManifest(header=header, records=ordered, root=out_dir)
    manifest.write(out_dir / MANIFEST_NAME)
    if journal.exists():
        journal.unlink()
    return manifest


def verify_checksums(manifest: AugmentationManifest) -> list[str]:
    """Return ``record_id#k`` for every ok record whose file does not match its checksum."""
    bad = []
    for r in manifest.ok_records():
        path = manifest.resolve(r)
        if not path.is_file() or sha256_file(path) != r.checksum:
            bad.append(f"{r.record_id}#{r.aug_index}")
    return bad
