"""Dataset ingestion and manifests.

Datasets are read from a ``root/<label>/<image-file>`` layout. Each image
becomes an :class:`ImageRecord` with a machine-independent ``record_id``.
An optional ``splits.csv`` at the root (columns ``path,split``; ``path``
relative to the root) assigns records to splits.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import pickle
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import EmptyDataset, ManifestIOError, MissingRoot, SchemaMismatch, ValidationError

logger = logging.getLogger(__name__)

FORMAT_VERSION = "1"
IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".gif", ".webp", ".tif", ".tiff", ".ppm"}
SPLITS_FILE = "splits.csv"


def label_to_text(label_raw: str) -> str:
    """``"Acura_Integra_Type_R_2001"`` -> ``"Acura Integra Type R 2001"``."""
    return " ".join(label_raw.replace("_", " ").split())


def make_record_id(label_raw: str, file_name: str) -> str:
    blob = label_raw.encode("utf-8") + b"\x00" + file_name.encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True)
class ImageRecord:
    record_id: str
    source_path: str  # posix path relative to the manifest root
    label_raw: str
    label_text: str
    width: int
    height: int
    split: str | None = None

    def validate(self) -> None:
        if "_" in self.label_text:
            raise ValidationError(f"label_text {self.label_text!r} contains underscores")
        if self.width < 1 or self.height < 1:
            raise ValidationError(f"record {self.record_id} has non-positive size")


@dataclass(frozen=True)
class DatasetManifest:
    root_path: str
    records: tuple[ImageRecord, ...]
    label_set: tuple[str, ...]
    created_at: str
    format_version: str = FORMAT_VERSION
    skipped: tuple[str, ...] = field(default_factory=tuple)

    def validate(self) -> None:
        ids = [r.record_id for r in self.records]
        if len(set(ids)) != len(ids):
            raise ValidationError("duplicate record_id in manifest")
        labels = set(self.label_set)
        if len(labels) != len(self.label_set):
            raise ValidationError("label_set has duplicates")
        for r in self.records:
            r.validate()
            if r.label_text not in labels:
                raise ValidationError(f"label {r.label_text!r} missing from label_set")
        paths = [r.source_path for r in self.records]
        if paths != sorted(paths):
            raise ValidationError("records are not ordered by source_path")

    def resolve(self, record: ImageRecord) -> Path:
        return Path(self.root_path) / record.source_path

    def by_id(self) -> dict[str, ImageRecord]:
        return {r.record_id: r for r in self.records}

    def label_index(self, label_text: str) -> int:
        return self.label_set.index(label_text)

    def to_dict(self) -> dict:
        return {
            "format_version": self.format_version,
            "root_path": self.root_path,
            "created_at": self.created_at,
            "label_set": list(self.label_set),
            "skipped": list(self.skipped),
            "records": [asdict(r) for r in self.records],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DatasetManifest":
        version = str(data.get("format_version"))
        if version != FORMAT_VERSION:
            raise SchemaMismatch(f"unsupported manifest format_version {version!r}")
        try:
            records = tuple(ImageRecord(**r) for r in data["records"])
            return cls(
                root_path=data["root_path"],
                records=records,
                label_set=tuple(data["label_set"]),
                created_at=data["created_at"],
                format_version=version,
                skipped=tuple(data.get("skipped", ())),
            )
        except (KeyError, TypeError) as exc:
            raise SchemaMismatch(f"malformed manifest: {exc}") from exc


def _read_splits(root: Path) -> dict[str, str]:
    path = root / SPLITS_FILE
    if not path.is_file():
        return {}
    with open(path, newline="", encoding="utf-8") as f:
        return {row["path"]: row["split"] for row in csv.DictReader(f)}


def scan_dataset(root_path: str | os.PathLike, created_at: str | None = None) -> DatasetManifest:
    """Build a manifest from ``root/<label>/<file>``.

    Unreadable files are skipped and listed in ``manifest.skipped``. When
    ``created_at`` is omitted it is derived from the newest file mtime, so
    rescanning an unchanged directory serializes identically.
    """
    root = Path(root_path)
    if not root.is_dir():
        raise MissingRoot(f"dataset root {root} does not exist")
    splits = _read_splits(root)
    records: list[ImageRecord] = []
    skipped: list[str] = []
    newest = 0.0
    for label_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        for path in sorted(p for p in label_dir.iterdir() if p.is_file()):
            if path.suffix.lower() not in IMAGE_SUFFIXES:
                continue
            rel = path.relative_to(root).as_posix()
            try:
                with Image.open(path) as im:
                    im.verify()
                with Image.open(path) as im:
                    width, height = im.size
            except (UnidentifiedImageError, OSError, SyntaxError) as exc:
                logger.warning("skipping unreadable image %s: %s", rel, exc)
                skipped.append(rel)
                continue
            newest = max(newest, path.stat().st_mtime)
            records.append(
                ImageRecord(
                    record_id=make_record_id(label_dir.name, path.name),
                    source_path=rel,
                    label_raw=label_dir.name,
                    label_text=label_to_text(label_dir.name),
                    width=width,
                    height=height,
                    split=splits.get(rel),
                )
            )
    if not records:
        raise EmptyDataset(f"no readable images under {root}")
    if skipped:
        logger.warning("%d unreadable image(s) skipped", len(skipped))
    records.sort(key=lambda r: r.source_path)
    if created_at is None:
        created_at = datetime.fromtimestamp(int(newest), tz=timezone.utc).isoformat()
    manifest = DatasetManifest(
        root_path=str(root.resolve()),
        records=tuple(records),
        label_set=tuple(sorted({r.label_text for r in records})),
        created_at=created_at,
        skipped=tuple(skipped),
    )
    manifest.validate()
    return manifest


def dumps_manifest(manifest: DatasetManifest) -> str:
    return json.dumps(manifest.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def write_manifest(manifest: DatasetManifest, path: str | os.PathLike) -> None:
    manifest.validate()
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(dumps_manifest(manifest), encoding="utf-8")
        os.replace(tmp, path)
    except OSError as exc:
        raise ManifestIOError(f"cannot write manifest to {path}: {exc}") from exc


def read_manifest(path: str | os.PathLike) -> DatasetManifest:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ManifestIOError(f"cannot read manifest {path}: {exc}") from exc
    manifest = DatasetManifest.from_dict(data)
    manifest.validate()
    return manifest


def select_split(manifest: DatasetManifest, splits: Sequence[str] | None) -> list[ImageRecord]:
    """Records whose split is in ``splits``; records without a split count as ``train``."""
    if splits is None:
        return list(manifest.records)
    wanted = set(splits)
    return [r for r in manifest.records if (r.split or "train") in wanted]


def import_cifar_batches(
    batch_files: Iterable[str | os.PathLike],
    out_root: str | os.PathLike,
    label_names: Sequence[str] | None = None,
    meta_file: str | os.PathLike | None = None,
    split: str | None = None,
) -> int:
    """Convert pickled CIFAR-style batches into the directory layout.

    Returns the number of images written. Label names come from
    ``label_names`` or from the ``meta_file`` pickle (``label_names`` or
    ``fine_label_names`` key).
    """
    if label_names is None:
        if meta_file is None:
            raise ValidationError("need label_names or meta_file")
        with open(meta_file, "rb") as f:
            meta = pickle.load(f, encoding="latin1")
        label_names = meta.get("label_names") or meta.get("fine_label_names")
    out = Path(out_root)
    split_rows: list[tuple[str, str]] = []
    count = 0
    for batch_file in batch_files:
        with open(batch_file, "rb") as f:
            batch = pickle.load(f, encoding="latin1")
        labels = batch.get("labels", batch.get("fine_labels"))
        data = np.asarray(batch["data"], dtype=np.uint8).reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1)
        for name, label, pixels in zip(batch["filenames"], labels, data):
            label_dir = out / label_names[label]
            label_dir.mkdir(parents=True, exist_ok=True)
            file_name = Path(name).with_suffix(".png").name
            Image.fromarray(pixels, mode="RGB").save(label_dir / file_name)
            if split:
                split_rows.append((f"{label_names[label]}/{file_name}", split))
            count += 1
    if split_rows:
        splits_path = out / SPLITS_FILE
        exists = splits_path.is_file()
        with open(splits_path, "a", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            if not exists:
                writer.writerow(["path", "split"])
            writer.writerows(split_rows)
    return count
