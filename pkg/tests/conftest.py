"""
Shared fixtures: synthetic image corpora written with OpenCV.

Animals are a white disc on a dark background, litter a black square on a
light background, so the two classes are trivially separable.
"""

from pathlib import Path
from typing import List

import cv2
import numpy as np
import pytest

from src.config import TrainConfig
from src.modules.dataset import ManifestRecord, Sample, SampleManifest


def write_animal(path: Path, variant: int = 0, size: int = 48) -> Path:
    """White disc on a dark background; variant shifts the disc and the shade."""
    image = np.full((size, size, 3), 20 + 8 * (variant % 5), dtype=np.uint8)
    centre = (size // 2 + (variant % 3) - 1, size // 2 + (variant % 4) - 2)
    cv2.circle(image, centre, size // 3 - (variant % 3), (255, 255, 255), thickness=-1)
    path.parent.mkdir(parents=True, exist_ok=True)
    assert cv2.imwrite(str(path), image)
    return path


def write_litter(path: Path, variant: int = 0, size: int = 48) -> Path:
    """Black square on a light background."""
    image = np.full((size, size, 3), 230 - 8 * (variant % 5), dtype=np.uint8)
    offset = size // 4 + (variant % 3) - 1
    side = size // 2 - (variant % 4)
    cv2.rectangle(image, (offset, offset), (offset + side, offset + side), (0, 0, 0), thickness=-1)
    path.parent.mkdir(parents=True, exist_ok=True)
    assert cv2.imwrite(str(path), image)
    return path


def build_corpus(root: Path, animals: int, litter: int, size: int = 48) -> Path:
    """Write <root>/animals/*.png and <root>/litter/*.png."""
    for i in range(animals):
        write_animal(root / "animals" / f"animal_{i:03d}.png", i, size)
    for i in range(litter):
        write_litter(root / "litter" / f"litter_{i:03d}.png", i, size)
    return root


def fixture_manifest(root: Path) -> SampleManifest:
    """
    The 8-image training set (4 animals, 4 litter) with a 1+1 validation
    split and a 2+2 test split, all distinct files.
    """
    records: List[ManifestRecord] = []
    for split, first, count in (("train", 0, 4), ("val", 4, 1), ("test", 5, 2)):
        for i in range(first, first + count):
            animal = write_animal(root / split / "animals" / f"a{i}.png", i)
            litter = write_litter(root / split / "litter" / f"l{i}.png", i)
            records.append(ManifestRecord(split, Sample(animal, 0)))
            records.append(ManifestRecord(split, Sample(litter, 1)))
    return SampleManifest(seed=0, records=records)


@pytest.fixture
def corpus(tmp_path):
    """A 4 + 4 image corpus."""
    return build_corpus(tmp_path / "corpus", animals=4, litter=4)


@pytest.fixture
def synthetic_manifest(tmp_path):
    """Manifest over the separable 8-image fixture."""
    return fixture_manifest(tmp_path / "fixture")


@pytest.fixture(scope="session")
def session_fixture_manifest(tmp_path_factory):
    """Same fixture, shared by the long training tests."""
    return fixture_manifest(tmp_path_factory.mktemp("fixture"))


@pytest.fixture
def reduced_config():
    """3x12x12 clone of the architecture used for whole-model checks."""
    return TrainConfig().reduced_clone()
