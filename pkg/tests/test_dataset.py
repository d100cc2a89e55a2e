"""
Unit tests for dataset preparation and the manifest file.
"""

from collections import Counter
from pathlib import Path

import numpy as np
import pytest

from src.config import ANIMAL, LITTER, PrepareConfig
from src.modules.dataset import (
    ManifestRecord,
    Sample,
    SampleManifest,
    augment_samples,
    balance_classes,
    crop_origin,
    load_sample,
    load_samples,
    parse_origin,
    prepare,
    read_manifest,
    rotation_origin,
    scan_class_dirs,
    split_train_val,
    validation_count,
    write_manifest,
)
from src.modules.images import decode_image, load_image
from src.modules.tensor import Rng
from src.utils.errors import DatasetError, ManifestError

from tests.conftest import build_corpus, write_animal, write_litter


def fake_samples(animals, litter, root="/data"):
    """Original samples with paths that need not exist."""
    return (
        [Sample(Path(root) / "animals" / f"a{i:04d}.png", ANIMAL) for i in range(animals)]
        + [Sample(Path(root) / "litter" / f"l{i:04d}.png", LITTER) for i in range(litter)]
    )


def counts_by_label(samples):
    return {label: sum(1 for s in samples if s.label == label) for label in (ANIMAL, LITTER)}


def test_origin_strings():
    assert rotation_origin(2) == "augmented:rot90:2"
    assert crop_origin((1, 2, 30, 40)) == "augmented:crop:1,2,30,40"
    assert parse_origin("original") == ("original", None)
    assert parse_origin("augmented:rot90:3") == ("rot90", 3)
    assert parse_origin("augmented:crop:1,2,30,40") == ("crop", (1, 2, 30, 40))


@pytest.mark.parametrize("origin", ["rotated", "augmented:rot90:4", "augmented:crop:1,2,3", "augmented:flip:1"])
def test_parse_origin_rejects(origin):
    with pytest.raises(ValueError):
        parse_origin(origin)


def test_sample_validation():
    with pytest.raises(ValueError):
        Sample(Path("x.png"), 2)
    sample = Sample(Path("x.png"), LITTER, rotation_origin(1))
    assert sample.path.is_absolute()
    assert sample.is_augmented


def test_scan_class_dirs_sorted(corpus):
    samples = scan_class_dirs(corpus)
    assert [s.label for s in samples] == [ANIMAL] * 4 + [LITTER] * 4
    names = [s.path.name for s in samples if s.label == ANIMAL]
    assert names == sorted(names)


def test_scan_ignores_other_files(corpus):
    (corpus / "animals" / "notes.txt").write_text("not an image")
    assert len(scan_class_dirs(corpus)) == 8


def test_missing_class_dir_is_named(tmp_path):
    root = tmp_path / "corpus"
    write_animal(root / "animals" / "a.png")
    with pytest.raises(DatasetError, match="litter"):
        scan_class_dirs(root)


def test_empty_class_dir(tmp_path):
    root = tmp_path / "corpus"
    write_animal(root / "animals" / "a.png")
    (root / "litter").mkdir()
    with pytest.raises(DatasetError, match="no PNG/JPEG"):
        scan_class_dirs(root)


def test_optional_dirs_may_be_missing(tmp_path):
    write_litter(tmp_path / "test" / "litter" / "l.png")
    samples = scan_class_dirs(tmp_path / "test", required=False)
    assert [s.label for s in samples] == [LITTER]


def test_augment_samples_expansion():
    """Test each original is followed by its rotations and seeded crops."""
    originals = fake_samples(2, 1)
    shapes = [(3, 40, 60)] * 3
    expanded = augment_samples(originals, shapes, Rng(0), rotations=2, crops=2, crop_min_fraction=0.5)
    assert len(expanded) == 3 * (1 + 2 + 2)
    first = expanded[:5]
    assert [s.origin for s in first[:3]] == ["original", "augmented:rot90:1", "augmented:rot90:2"]
    for sample in first[3:]:
        kind, (top, left, height, width) = parse_origin(sample.origin)
        assert kind == "crop"
        assert 20 <= height <= 40 and 30 <= width <= 60
        assert top + height <= 40 and left + width <= 60
    assert all(s.path == originals[0].path for s in first)


def test_augment_samples_deterministic():
    originals = fake_samples(3, 3)
    shapes = [(3, 50, 50)] * 6
    a = augment_samples(originals, shapes, Rng(9), crops=3)
    b = augment_samples(originals, shapes, Rng(9), crops=3)
    assert a == b


def test_tiny_images_are_not_cropped():
    expanded = augment_samples(fake_samples(1, 0), [(3, 6, 6)], Rng(0), crops=2)
    assert [s.origin for s in expanded] == ["original"]


def test_balance_classes_subsamples_majority():
    samples = fake_samples(30, 12)
    balanced = balance_classes(samples, Rng(1))
    assert counts_by_label(balanced) == {ANIMAL: 12, LITTER: 12}
    assert set(s for s in samples if s.label == LITTER) <= set(balanced)
    assert balanced == balance_classes(samples, Rng(1))


def test_balance_classes_needs_both_classes():
    with pytest.raises(DatasetError):
        balance_classes(fake_samples(3, 0), Rng(0))


def test_validation_count_rounds_up():
    assert validation_count(0.1, 822) == 83
    assert validation_count(0.1, 10) == 1
    assert validation_count(0.1, 4) == 1
    assert validation_count(0.2, 5) == 1


def test_split_full_scale_counts():
    """Test 822 + 822 samples split 739 + 83 per class."""
    train, val = split_train_val(fake_samples(822, 822), 0.1, Rng(4))
    assert counts_by_label(val) == {ANIMAL: 83, LITTER: 83}
    assert counts_by_label(train) == {ANIMAL: 739, LITTER: 739}
    assert not set(train) & set(val)


def test_split_keeps_source_groups_together():
    originals = fake_samples(20, 20)
    expanded = augment_samples(originals, [(3, 32, 32)] * 40, Rng(2), rotations=2)
    train, val = split_train_val(expanded, 0.1, Rng(3))
    assert not {s.source for s in train} & {s.source for s in val}
    train_counts, val_counts = counts_by_label(train), counts_by_label(val)
    assert train_counts[ANIMAL] == train_counts[LITTER]
    assert val_counts == {ANIMAL: 6, LITTER: 6}


def test_split_drops_only_augmented_validation_surplus():
    """Test groups of three against a target of two per class."""
    expanded = augment_samples(fake_samples(4, 4), [(3, 32, 32)] * 8, Rng(0), rotations=2)
    train, val = split_train_val(expanded, 0.1, Rng(1))
    dropped = set(expanded) - set(train) - set(val)

    assert counts_by_label(val) == {ANIMAL: 2, LITTER: 2}
    assert counts_by_label(train) == {ANIMAL: 9, LITTER: 9}
    assert len(dropped) == 2
    assert all(s.is_augmented for s in dropped)
    assert {s.source for s in dropped} <= {s.source for s in val}
    assert sum(not s.is_augmented for s in val) == 2
    assert not set(train) & set(val)
    assert set(train) | set(val) | dropped == set(expanded)


def test_split_too_few_samples():
    with pytest.raises(DatasetError):
        split_train_val(fake_samples(1, 1), 0.1, Rng(0))


def test_prepare_tiny_corpus(corpus):
    manifest = prepare(corpus, PrepareConfig(seed=3))
    counts = manifest.counts()
    assert counts["train"] == {ANIMAL: 3, LITTER: 3}
    assert counts["val"] == {ANIMAL: 1, LITTER: 1}
    assert counts["test"] == {ANIMAL: 0, LITTER: 0}
    assert len(manifest.records) == 8
    assert [r.split for r in manifest.records] == ["train"] * 6 + ["val"] * 2


def test_prepare_pipeline_invariants(tmp_path):
    """Test a 40-image corpus with augmentation: balance, no leakage, reproducibility."""
    root = build_corpus(tmp_path / "corpus", animals=24, litter=16)
    write_animal(root / "test" / "animals" / "t0.png", 7)
    write_litter(root / "test" / "litter" / "t0.png", 7)
    config = PrepareConfig(seed=11, augment_rotations=1, augment_crops=1)

    manifest = prepare(root, config)
    train, val = manifest.split("train"), manifest.split("val")
    assert counts_by_label(train)[ANIMAL] == counts_by_label(train)[LITTER]
    assert abs(counts_by_label(val)[ANIMAL] - counts_by_label(val)[LITTER]) <= 1
    assert not {s.source for s in train} & {s.source for s in val}
    assert [s.origin for s in manifest.split("test")] == ["original", "original"]

    # Rebuild the balanced pool prepare drew from, with the same random stream.
    rng = Rng(config.seed)
    originals = scan_class_dirs(root)
    expanded = augment_samples(
        originals, [decode_image(s.path).shape for s in originals], rng,
        rotations=config.augment_rotations,
        crops=config.augment_crops,
        crop_min_fraction=config.crop_min_fraction,
    )
    balanced = Counter(balance_classes(expanded, rng))
    kept = Counter(train) + Counter(val)
    assert not kept - balanced
    dropped = balanced - kept
    val_sources = {s.source for s in val}
    assert all(s.is_augmented for s in dropped if s.source in val_sources)
    assert kept + dropped == balanced

    write_manifest(manifest, tmp_path / "a.tsv")
    write_manifest(prepare(root, config), tmp_path / "b.tsv")
    assert (tmp_path / "a.tsv").read_bytes() == (tmp_path / "b.tsv").read_bytes()


def test_prepare_lists_undecodable_files(corpus):
    bad = corpus / "litter" / "broken.png"
    bad.write_bytes(b"not a png")
    with pytest.raises(DatasetError, match="broken.png"):
        prepare(corpus, PrepareConfig(seed=0))


def test_manifest_roundtrip(corpus, tmp_path):
    manifest = prepare(corpus, PrepareConfig(seed=5, augment_rotations=1))
    path = corpus / "manifest.tsv"
    write_manifest(manifest, path)
    text = path.read_text(encoding="utf-8")
    assert text.startswith("manifest-v1 seed=5\n")
    assert "\r" not in text
    assert "\tanimals/" in text
    assert read_manifest(path) == manifest


def test_manifest_paths_relative_to_manifest(corpus, tmp_path):
    manifest = prepare(corpus, PrepareConfig(seed=5))
    path = tmp_path / "elsewhere" / "manifest.tsv"
    write_manifest(manifest, path)
    assert "../corpus/animals/" in path.read_text(encoding="utf-8")
    assert read_manifest(path).records == manifest.records


@pytest.mark.parametrize("body,line,message", [
    ("manifest-v2 seed=1\n", 1, "version"),
    ("manifest-v1\n", 1, "header"),
    ("manifest-v1 seed=abc\n", 1, "seed"),
    ("manifest-v1 seed=1\ntrain\t0\toriginal\n", 2, "4 tab-separated"),
    ("manifest-v1 seed=1\ntrain\t0\toriginal\ta.png\nholdout\t0\toriginal\tb.png\n", 3, "split"),
    ("manifest-v1 seed=1\ntrain\t2\toriginal\ta.png\n", 2, "label '2' outside"),
    ("manifest-v1 seed=1\ntrain\t1\tflipped\ta.png\n", 2, "origin"),
])
def test_read_manifest_errors(tmp_path, body, line, message):
    """Test malformed manifests are rejected with their line number."""
    path = tmp_path / "manifest.tsv"
    path.write_text(body, encoding="utf-8")
    with pytest.raises(ManifestError, match=message) as excinfo:
        read_manifest(path)
    assert excinfo.value.line == line
    assert str(excinfo.value).startswith(f"line {line}:")


def test_write_manifest_rejects_tabs(tmp_path):
    manifest = SampleManifest(seed=0, records=[
        ManifestRecord("train", Sample(tmp_path / "bad\tname.png", ANIMAL)),
    ])
    with pytest.raises(ManifestError):
        write_manifest(manifest, tmp_path / "manifest.tsv")


def test_load_sample_reapplies_transforms(tmp_path):
    path = write_animal(tmp_path / "a.png", size=40)
    original = load_sample(Sample(path, ANIMAL), 20)
    assert np.array_equal(original, load_image(path, 20))
    rotated = load_sample(Sample(path, ANIMAL, rotation_origin(2)), 20)
    np.testing.assert_allclose(rotated, original[:, ::-1, ::-1], atol=1e-6)
    cropped = load_sample(Sample(path, ANIMAL, crop_origin((0, 0, 20, 20))), 20)
    assert cropped.shape == (3, 20, 20)


def test_load_samples_order_and_skip(tmp_path):
    good = [Sample(write_animal(tmp_path / f"a{i}.png", i), ANIMAL) for i in range(3)]
    bad = Sample(tmp_path / "missing.png", LITTER)
    samples = [good[0], bad, good[1], good[2]]

    with pytest.raises(DatasetError, match="missing.png"):
        load_samples(samples, 16, workers=2)

    loaded = load_samples(samples, 16, workers=2, skip_unreadable=True)
    assert loaded.samples == good
    assert loaded.images.shape == (3, 3, 16, 16)
    assert loaded.labels.tolist() == [ANIMAL] * 3
    assert len(loaded.failures) == 1
    for image, sample in zip(loaded.images, good):
        assert np.array_equal(image, load_image(sample.path, 16))
