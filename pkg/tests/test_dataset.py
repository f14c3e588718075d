import hashlib
import json
import os

import numpy as np
import pytest

from semaug.dataset import (
    DatasetManifest,
    dumps_manifest,
    import_cifar_batches,
    label_to_text,
    make_record_id,
    read_manifest,
    scan_dataset,
    select_split,
    write_manifest,
)
from semaug.errors import EmptyDataset, ManifestIOError, MissingRoot, SchemaMismatch
from semaug.imaging import write_png


def test_scan_counts_and_labels(tiny_dataset_root):
    m = scan_dataset(tiny_dataset_root)
    assert len(m.records) == 4
    assert m.label_set == ("cat", "dog")
    assert [r.source_path for r in m.records] == sorted(r.source_path for r in m.records)
    assert all(r.width == 16 and r.height == 16 for r in m.records)


def test_empty_directory_raises(tmp_path):
    with pytest.raises(EmptyDataset):
        scan_dataset(tmp_path)


def test_missing_root_raises(tmp_path):
    with pytest.raises(MissingRoot):
        scan_dataset(tmp_path / "nope")


def test_underscore_labels_become_spaced(tmp_path):
    raw = "Chevrolet_Silverado_1500_Extended_Cab_2012"
    write_png(tmp_path / raw / "a.png", np.zeros((4, 4, 3), np.uint8))
    rec = scan_dataset(tmp_path).records[0]
    assert rec.label_text == "Chevrolet Silverado 1500 Extended Cab 2012"
    assert rec.label_raw == raw
    assert label_to_text("Acura_Integra_Type_R_2001") == "Acura Integra Type R 2001"


def test_record_id_is_truncated_sha256():
    expected = hashlib.sha256(b"cat\x00a.png").hexdigest()[:16]
    assert make_record_id("cat", "a.png") == expected


def test_unreadable_image_is_skipped(tiny_dataset_root):
    (tiny_dataset_root / "cat" / "broken.png").write_bytes(b"not an image")
    m = scan_dataset(tiny_dataset_root)
    assert len(m.records) == 4
    assert m.skipped == ("cat/broken.png",)


def test_rescan_is_byte_identical(synthetic_root):
    assert dumps_manifest(scan_dataset(synthetic_root)) == dumps_manifest(scan_dataset(synthetic_root))


def test_round_trip(tiny_dataset_root, tmp_path):
    m = scan_dataset(tiny_dataset_root)
    path = tmp_path / "m.json"
    write_manifest(m, path)
    assert read_manifest(path) == m


def test_unknown_version_rejected(tiny_dataset_root, tmp_path):
    data = scan_dataset(tiny_dataset_root).to_dict()
    data["format_version"] = "99"
    path = tmp_path / "m.json"
    path.write_text(json.dumps(data))
    with pytest.raises(SchemaMismatch):
        read_manifest(path)


@pytest.mark.skipif(os.geteuid() == 0, reason="root ignores directory permissions")
def test_write_to_read_only_location(tiny_dataset_root, tmp_path):
    ro = tmp_path / "ro"
    ro.mkdir()
    ro.chmod(0o500)
    try:
        with pytest.raises(ManifestIOError):
            write_manifest(scan_dataset(tiny_dataset_root), ro / "m.json")
    finally:
        ro.chmod(0o700)


def test_write_into_a_file_path_is_io_error(tiny_dataset_root, tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(ManifestIOError):
        write_manifest(scan_dataset(tiny_dataset_root), blocker / "m.json")


def test_split_column(tiny_dataset_root):
    (tiny_dataset_root / "splits.csv").write_text("path,split\ncat/0.png,val\n")
    m = scan_dataset(tiny_dataset_root)
    assert [r.split for r in m.records].count("val") == 1
    assert len(select_split(m, ["train"])) == 3
    assert len(select_split(m, None)) == 4


def test_every_source_path_resolves(synthetic_dataset):
    for rec in synthetic_dataset.records:
        assert synthetic_dataset.resolve(rec).is_file()


def test_import_cifar_batches(tmp_path):
    import pickle

    batch = {
        "data": np.arange(2 * 3072, dtype=np.uint8).reshape(2, 3072) % 251,
        "labels": [0, 1],
        "filenames": ["x_1.png", "y_2.png"],
    }
    path = tmp_path / "data_batch_1"
    path.write_bytes(pickle.dumps(batch))
    n = import_cifar_batches([path], tmp_path / "out", label_names=["airplane", "automobile"], split="train")
    assert n == 2
    m = scan_dataset(tmp_path / "out")
    assert m.label_set == ("airplane", "automobile")
    assert all(r.split == "train" and (r.width, r.height) == (32, 32) for r in m.records)
