"""Post-hoc filters over generated images.

* label filter: zero-shot classify the augmented image against every label
  prompt and keep it only if its own label wins outright;
* prompt filter: image-prompt similarity against the per-label mean;
* original-image filter: augmented-original similarity against the per-label mean.

Filters never touch records in place; :func:`apply_filter_reports` returns a
new manifest with ``filter_status`` set.
"""

from __future__ import annotations

import json
import math
import os
from collections import defaultdict
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

from .dataset import DatasetManifest
from .errors import MissingOriginal, ValidationError
from .generation import AugmentationManifest, AugRecord
from .imaging import load_rgb

VOWELS = "aeiou"


def label_prompt(label: str) -> str:
    article = "an" if label[:1].lower() in VOWELS else "a"
    return f"a photo of {article} {label}"


@dataclass
class FilterDecision:
    record_id: str
    aug_index: int
    label: str
    score: float | None
    kept: bool | None  # None: scoring failed
    reason: str | None = None
    label_scores: list[float] | None = None
    predicted: str | None = None

    @property
    def key(self) -> str:
        return f"{self.record_id}#{self.aug_index}"


@dataclass
class FilterReport:
    filter_kind: str
    decisions: list[FilterDecision]
    thresholds: dict[str, float] = field(default_factory=dict)
    label_set: list[str] | None = None

    def totals(self) -> dict[str, dict[str, int]]:
        out: dict[str, dict[str, int]] = defaultdict(lambda: {"kept": 0, "dropped": 0, "failed": 0})
        for d in self.decisions:
            out[d.label]["failed" if d.kept is None else "kept" if d.kept else "dropped"] += 1
        return dict(sorted(out.items()))

    def kept_keys(self) -> set[str]:
        return {d.key for d in self.decisions if d.kept}

    def dropped_keys(self) -> set[str]:
        return {d.key for d in self.decisions if d.kept is False}

    def to_dict(self) -> dict:
        return {
            "filter_kind": self.filter_kind,
            "thresholds": self.thresholds,
            "label_set": self.label_set,
            "totals": self.totals(),
            "decisions": [asdict(d) for d in self.decisions],
        }

    def write(self, path: str | os.PathLike) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def read(cls, path: str | os.PathLike) -> "FilterReport":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(data["filter_kind"], [FilterDecision(**d) for d in data["decisions"]],
                   data.get("thresholds", {}), data.get("label_set"))


def _candidates(manifest: AugmentationManifest, records: Sequence[AugRecord] | None) -> list[AugRecord]:
    if records is None:
        records = [r for r in manifest.records if r.ok and r.filter_status != "dropped"]
    return [r for r in records if r.ok]


def per_label_means(scores: dict[str, list[float]]) -> dict[str, float]:
    """Arithmetic mean per label, clamped into ``[min, max]`` of that label's scores.

    The clamp only matters at the last ulp: it keeps a constant score list
    equal to its own mean so that nothing is dropped.
    """
    out = {}
    for label, values in scores.items():
        if values:
            mean = math.fsum(values) / len(values)
            out[label] = min(max(mean, min(values)), max(values))
    return out


def _threshold_filter(kind: str, manifest: AugmentationManifest, records: list[AugRecord], score_fn,
                      thresholds: dict[str, float] | None) -> FilterReport:
    raw: list[tuple[AugRecord, float | None, str | None]] = []
    for r in records:
        try:
            raw.append((r, float(score_fn(r)), None))
        except (MissingOriginal, ValidationError):
            raise
        except Exception as exc:  # backend or decode failure: excluded from totals
            raw.append((r, None, str(exc)))
    if thresholds is None:
        by_label: dict[str, list[float]] = defaultdict(list)
        for r, s, _ in raw:
            if s is not None:
                by_label[r.label_text].append(s)
        thresholds = per_label_means(by_label)
    decisions = []
    for r, s, err in raw:
        if s is None:
            decisions.append(FilterDecision(r.record_id, r.aug_index, r.label_text, None, None, f"failed: {err}"))
            continue
        t = thresholds[r.label_text]
        kept = s >= t
        reason = None if kept else f"{kind} score {s:.6f} < threshold {t:.6f}"
        decisions.append(FilterDecision(r.record_id, r.aug_index, r.label_text, s, kept, reason))
    return FilterReport(kind, decisions, dict(sorted(thresholds.items())))


def label_filter(manifest: AugmentationManifest, label_set: Sequence[str], scorer,
                 records: Sequence[AugRecord] | None = None) -> FilterReport:
    """Keep a record iff its own label is the unique arg-max label prompt."""
    if not label_set:
        raise ValidationError("label filter needs a non-empty label set")
    labels = list(label_set)
    texts = [label_prompt(lbl) for lbl in labels]
    decisions = []
    for r in _candidates(manifest, records):
        if r.label_text not in labels:
            raise ValidationError(f"record label {r.label_text!r} not in label set")
        true = labels.index(r.label_text)
        try:
            scores = [float(s) for s in scorer.image_text_similarity(load_rgb(manifest.resolve(r)), texts)]
        except Exception as exc:
            decisions.append(FilterDecision(r.record_id, r.aug_index, r.label_text, None, None, f"failed: {exc}"))
            continue
        best = max(range(len(scores)), key=lambda i: (scores[i], -i))
        winners = [i for i, s in enumerate(scores) if s == scores[best]]
        kept = winners == [true]
        reason = None if kept else f"predicted {labels[best]!r}"
        decisions.append(FilterDecision(r.record_id, r.aug_index, r.label_text, scores[true], kept, reason,
                                        label_scores=scores, predicted=labels[best]))
    return FilterReport("label", decisions, {}, labels)


def prompt_filter(manifest: AugmentationManifest, scorer, records: Sequence[AugRecord] | None = None,
                  thresholds: dict[str, float] | None = None) -> FilterReport:
    """Image-prompt similarity vs. per-label mean; ties with the mean are kept."""
    def score(r: AugRecord) -> float:
        if not r.prompt_text:
            raise ValueError("record has an empty prompt")
        return scorer.image_text_similarity(load_rgb(manifest.resolve(r)), [r.prompt_text])[0]

    return _threshold_filter("prompt", manifest, _candidates(manifest, records), score, thresholds)


def original_image_filter(manifest: AugmentationManifest, dataset: DatasetManifest, scorer,
                          records: Sequence[AugRecord] | None = None,
                          thresholds: dict[str, float] | None = None) -> FilterReport:
    """Augmented-vs-original image similarity vs. per-label mean."""
    originals = dataset.by_id()
    candidates = _candidates(manifest, records)
    for r in candidates:
        if r.record_id not in originals:
            raise MissingOriginal(f"no original image for record {r.record_id}")
    cache: dict[str, object] = {}

    def score(r: AugRecord) -> float:
        if r.record_id not in cache:
            cache[r.record_id] = load_rgb(dataset.resolve(originals[r.record_id]))
        return scorer.image_image_similarity(load_rgb(manifest.resolve(r)), cache[r.record_id])

    return _threshold_filter("original", manifest, candidates, score, thresholds)


def run_filter(kind: str, manifest: AugmentationManifest, scorer, dataset: DatasetManifest | None = None,
               records: Sequence[AugRecord] | None = None) -> FilterReport:
    if kind == "label":
        if dataset is None:
            raise ValidationError("label filter needs the dataset label set")
        return label_filter(manifest, dataset.label_set, scorer, records)
    if kind == "prompt":
        return prompt_filter(manifest, scorer, records)
    if kind == "original":
        if dataset is None:
            raise ValidationError("original-image filter needs the dataset manifest")
        return original_image_filter(manifest, dataset, scorer, records)
    raise ValidationError(f"unknown filter kind {kind!r}")


def apply_filter_reports(manifest: AugmentationManifest, reports: Sequence[FilterReport]) -> AugmentationManifest:
    """Copy of ``manifest`` with pending records moved to ``kept`` or ``dropped``.

    A record is dropped by the first report that drops it and kept when every
    report that saw it kept it. Records a report failed to score stay pending.
    """
    dropped: dict[str, str] = {}
    seen: dict[str, int] = defaultdict(int)
    kept_by: dict[str, int] = defaultdict(int)
    for rep in reports:
        for d in rep.decisions:
            seen[d.key] += 1
            if d.kept is False and d.key not in dropped:
                dropped[d.key] = d.reason or rep.filter_kind
            elif d.kept:
                kept_by[d.key] += 1
    out = []
    for r in manifest.records:
        key = f"{r.record_id}#{r.aug_index}"
        if r.ok and r.filter_status == "pending":
            if key in dropped:
                r = r.with_filter("dropped", dropped[key])
            elif seen[key] and kept_by[key] == seen[key]:
                r = r.with_filter("kept")
        out.append(r)
    header = {**manifest.header, "filters": [*manifest.header.get("filters", []), *[rep.filter_kind for rep in reports]]}
    return AugmentationManifest(header=header, records=out, root=manifest.root)


def run_filter_chain(manifest: AugmentationManifest, kinds: Sequence[str], scorer,
                     dataset: DatasetManifest | None = None) -> tuple[AugmentationManifest, list[FilterReport]]:
    """Apply filters sequentially: each one sees only the survivors of the previous."""
    candidates = [r for r in manifest.records if r.ok and r.filter_status == "pending"]
    reports = []
    for kind in kinds:
        rep = run_filter(kind, manifest, scorer, dataset, candidates)
        reports.append(rep)
        keep = rep.kept_keys()
        candidates = [r for r in candidates if f"{r.record_id}#{r.aug_index}" in keep]
    return apply_filter_reports(manifest, reports), reports


def copy_filtered_manifest(filtered: AugmentationManifest, path: str | os.PathLike) -> AugmentationManifest:
    """Write ``filtered`` to ``path`` with image paths rebased so they still resolve."""
    path = Path(path)
    dest = path.parent.resolve()
    src = filtered.root.resolve() if filtered.root else dest
    rebased = []
    for r in filtered.records:
        if r.output_path is not None and src != dest:
            r = replace(r, output_path=os.path.relpath(src / r.output_path, dest))
        rebased.append(r)
    out = AugmentationManifest(header=filtered.header, records=rebased, root=dest)
    out.write(path)
    return out
