"""Original-vs-augmented similarity reports and side-by-side comparison grids."""

from __future__ import annotations

import csv
import io
import json
import math
import os
from collections import defaultdict
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from PIL import Image, ImageDraw, ImageFont

from .dataset import DatasetManifest
from .errors import IncompleteGroup, MissingOriginal, NoCommonRecords, ValidationError
from .generation import AugmentationManifest
from .imaging import load_rgb


@dataclass
class SimilarityReport:
    method_id: str
    scorer_id: str
    k: int
    per_label: dict[str, float]
    per_label_counts: dict[str, int]
    overall: float
    record_count: int
    per_record: dict[str, float]
    similarity_range: tuple[float, float] = (-1.0, 1.0)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["label", "value", "originals"])
        for label, value in self.per_label.items():
            writer.writerow([label, f"{value:.10f}", self.per_label_counts[label]])
        return buf.getvalue()

    def write(self, path: str | os.PathLike) -> tuple[Path, Path]:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        csv_path = path.with_suffix(".csv")
        csv_path.write_text(self.to_csv(), encoding="utf-8")
        return path, csv_path


def per_label_similarity(
    aug_manifest: AugmentationManifest,
    originals: DatasetManifest,
    scorer,
    k: int = 5,
    method_id: str | None = None,
    include_dropped: bool = True,
) -> SimilarityReport:
    """Mean cosine similarity between each original and its ``k`` augmentations.

    Per original: mean over its k augmentations. Per label: mean over
    originals. Overall: mean over all originals.
    """
    groups: dict[str, list] = defaultdict(list)
    for r in aug_manifest.records:
        if r.ok and (include_dropped or r.filter_status != "dropped"):
            groups[r.record_id].append(r)
    by_id = originals.by_id()
    per_record: dict[str, float] = {}
    per_label_vals: dict[str, list[float]] = defaultdict(list)
    for record_id in sorted(groups):
        recs = groups[record_id]
        if len(recs) != k:
            raise IncompleteGroup(f"original {record_id} has {len(recs)} augmentations, expected {k}")
        if record_id not in by_id:
            raise MissingOriginal(f"no original for {record_id}")
        orig = by_id[record_id]
        orig_img = load_rgb(originals.resolve(orig))
        sims = [scorer.image_image_similarity(orig_img, load_rgb(aug_manifest.resolve(r))) for r in recs]
        per_record[record_id] = math.fsum(sims) / k
        per_label_vals[orig.label_text].append(per_record[record_id])
    if not per_record:
        raise ValidationError("manifest has no usable augmentations")
    per_label = {lbl: math.fsum(v) / len(v) for lbl, v in sorted(per_label_vals.items())}
    return SimilarityReport(
        method_id=method_id or aug_manifest.header.get("method", "unknown"),
        scorer_id=getattr(scorer, "backend_id", type(scorer).__name__),
        k=k,
        per_label=per_label,
        per_label_counts={lbl: len(v) for lbl, v in sorted(per_label_vals.items())},
        overall=math.fsum(per_record.values()) / len(per_record),
        record_count=len(per_record),
        per_record=per_record,
        similarity_range=tuple(getattr(scorer, "similarity_range", (-1.0, 1.0))),
    )


TILE = 96
MARGIN_TOP = 18
MARGIN_LEFT = 110
PAD = 4
BACKGROUND = (255, 255, 255)
PLACEHOLDER = (200, 200, 200)


def _tile(image: np.ndarray | None) -> Image.Image:
    if image is None:
        tile = Image.new("RGB", (TILE, TILE), PLACEHOLDER)
        draw = ImageDraw.Draw(tile)
        draw.line((0, 0, TILE - 1, TILE - 1), fill=(120, 120, 120))
        draw.line((0, TILE - 1, TILE - 1, 0), fill=(120, 120, 120))
        return tile
    return Image.fromarray(image).resize((TILE, TILE), Image.NEAREST)


def render_grid(
    originals: DatasetManifest,
    aug_manifests_by_method: Mapping[str, AugmentationManifest],
    out_path: str | os.PathLike,
    record_ids: Sequence[str] | None = None,
    aug_index: int = 0,
) -> tuple[int, int]:
    """Rows are originals, columns are the original plus one column per method.

    Records missing from a method get a placeholder tile. Returns the grid
    shape as (rows, columns).
    """
    if not aug_manifests_by_method:
        raise ValidationError("need at least one method manifest")
    lookup = {
        method: {r.record_id: r for r in m.records if r.ok and r.aug_index == aug_index}
        for method, m in aug_manifests_by_method.items()
    }
    by_id = originals.by_id()
    if record_ids is None:
        common = set().union(*[set(v) for v in lookup.values()]) & set(by_id)
        record_ids = [r.record_id for r in originals.records if r.record_id in common]
    else:
        record_ids = [rid for rid in record_ids if rid in by_id]
    if not record_ids:
        raise NoCommonRecords("no record appears in both the originals and any method manifest")

    columns = ["original", *aug_manifests_by_method]
    width = MARGIN_LEFT + len(columns) * (TILE + PAD)
    height = MARGIN_TOP + len(record_ids) * (TILE + PAD)
    canvas = Image.new("RGB", (width, height), BACKGROUND)
    draw = ImageDraw.Draw(canvas)
    font = ImageFont.load_default()
    for c, name in enumerate(columns):
        draw.text((MARGIN_LEFT + c * (TILE + PAD), 2), name[:16], fill=(0, 0, 0), font=font)
    for row, rid in enumerate(record_ids):
        rec = by_id[rid]
        y = MARGIN_TOP + row * (TILE + PAD)
        draw.text((2, y + TILE // 2 - 5), rec.label_text[:18], fill=(0, 0, 0), font=font)
        cells = [load_rgb(originals.resolve(rec))]
        for method, manifest in aug_manifests_by_method.items():
            aug = lookup[method].get(rid)
            cells.append(load_rgb(manifest.resolve(aug)) if aug is not None else None)
        for c, cell in enumerate(cells):
            canvas.paste(_tile(cell), (MARGIN_LEFT + c * (TILE + PAD), y))
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    canvas.save(out_path, format="PNG")
    return len(record_ids), len(columns)
