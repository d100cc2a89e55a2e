"""
Dataset preparation: ingestion, offline augmentation, class balancing,
stratified validation split and the manifest file.

Augmented samples are recorded, not written to disk. A manifest record
always points at the source image; its origin field names the transform
that is re-applied at load time:

    original
    augmented:rot90:<k>
    augmented:crop:<top>,<left>,<height>,<width>

Manifest format (UTF-8, LF):

    manifest-v1 seed=<u64>
    <split>\t<label>\t<origin>\t<path>
    ...

with paths relative to the manifest's directory.
"""

import math
import os
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path, PurePath
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from src.config import (
    ANIMAL,
    CLASS_DIRS,
    CLASS_NAMES,
    DECODE_WORKERS,
    ERROR_MESSAGES,
    IMAGE_SIZE,
    LITTER,
    MANIFEST_SPLITS,
    MANIFEST_VERSION,
    MIN_CROP_EXTENT,
    TEST_DIR,
    PrepareConfig,
)
from src.modules.images import augment_crop, augment_rotate, check_region, decode_image, resize_image
from src.modules.tensor import DTYPE, Rng
from src.utils.errors import DatasetError, ImageLoadError, ManifestError
from src.utils.logging import get_logger
from src.utils.validators import is_supported_image, validate_manifest_field

logger = get_logger("dataset")

PathLike = Union[str, Path]
ORIGINAL = "original"
AUGMENTED_PREFIX = "augmented:"


def rotation_origin(k: int) -> str:
    return f"{AUGMENTED_PREFIX}rot90:{k}"


def crop_origin(region: Tuple[int, int, int, int]) -> str:
    return f"{AUGMENTED_PREFIX}crop:" + ",".join(str(value) for value in region)


def parse_origin(origin: str) -> Tuple[str, Optional[object]]:
    """
    Split an origin field into (kind, argument).

    Returns:
        ("original", None), ("rot90", k) or ("crop", (top, left, height, width))
    """
    if origin == ORIGINAL:
        return ORIGINAL, None
    if not origin.startswith(AUGMENTED_PREFIX):
        raise ValueError(f"unknown origin '{origin}'")
    kind, _, argument = origin[len(AUGMENTED_PREFIX):].partition(":")
    try:
        if kind == "rot90":
            k = int(argument)
            if k not in (1, 2, 3):
                raise ValueError
            return kind, k
        if kind == "crop":
            region = tuple(int(value) for value in argument.split(","))
            if len(region) != 4:
                raise ValueError
            return kind, region
    except ValueError:
        pass
    raise ValueError(f"malformed origin '{origin}'")


@dataclass(frozen=True)
class Sample:
    """One labelled image; augmented samples keep their source in path."""

    path: Path
    label: int
    origin: str = ORIGINAL

    def __post_init__(self):
        if self.label not in (ANIMAL, LITTER):
            raise ValueError(f"label must be 0 or 1, got {self.label}")
        parse_origin(self.origin)
        object.__setattr__(self, "path", Path(os.path.abspath(self.path)))

    @property
    def is_augmented(self) -> bool:
        return self.origin != ORIGINAL

    @property
    def source(self) -> Path:
        return self.path


class ManifestRecord(NamedTuple):
    split: str
    sample: Sample


@dataclass
class SampleManifest:
    """Labelled samples with their split tags and the seed that produced them."""

    seed: int
    records: List[ManifestRecord] = field(default_factory=list)

    def split(self, name: str) -> List[Sample]:
        return [record.sample for record in self.records if record.split == name]

    def counts(self) -> Dict[str, Dict[int, int]]:
        """Samples per class per split."""
        counts = {split: {ANIMAL: 0, LITTER: 0} for split in MANIFEST_SPLITS}
        for record in self.records:
            counts[record.split][record.sample.label] += 1
        return counts


def load_sample(sample: Sample, size: int = IMAGE_SIZE) -> np.ndarray:
    """Decode the source image, re-apply the recorded transform and standardize."""
    img = decode_image(sample.path)
    kind, argument = parse_origin(sample.origin)
    if kind == "rot90":
        return resize_image(augment_rotate(img, argument), size)
    if kind == "crop":
        try:
            return augment_crop(img, argument, size)
        except ValueError as e:
            raise ImageLoadError(sample.path, str(e))
    return resize_image(img, size)


class LoadedImages(NamedTuple):
    images: np.ndarray
    labels: np.ndarray
    samples: List[Sample]
    failures: List[ImageLoadError]


def _try_load(sample: Sample, size: int):
    try:
        return load_sample(sample, size)
    except ImageLoadError as e:
        return e


def load_samples(samples: Sequence[Sample], size: int = IMAGE_SIZE, workers: int = DECODE_WORKERS,
                 skip_unreadable: bool = False) -> LoadedImages:
    """
    Decode samples on a thread pool into one batch array.

    Output order follows the input order. Unreadable images abort unless
    skip_unreadable is set, in which case they are left out and reported.
    """
    with ThreadPoolExecutor(max_workers=workers) as executor:
        results = list(executor.map(lambda sample: _try_load(sample, size), samples))

    failures = [result for result in results if isinstance(result, ImageLoadError)]
    if failures and not skip_unreadable:
        paths = ", ".join(str(failure.path) for failure in failures)
        raise DatasetError(ERROR_MESSAGES["undecodable"].format(count=len(failures), paths=paths))
    for failure in failures:
        logger.warning(f"Skipping unreadable image {failure}")

    kept = [(sample, result) for sample, result in zip(samples, results)
            if not isinstance(result, ImageLoadError)]
    if kept:
        images = np.stack([image for _, image in kept]).astype(DTYPE, copy=False)
    else:
        images = np.zeros((0, 3, size, size), dtype=DTYPE)
    labels = np.array([sample.label for sample, _ in kept], dtype=np.int64)
    return LoadedImages(images, labels, [sample for sample, _ in kept], failures)


def scan_class_dirs(root: PathLike, required: bool = True) -> List[Sample]:
    """
    List <root>/animals/* and <root>/litter/* as original samples, sorted by name.

    Args:
        root: Directory holding the class folders
        required: When False, missing or empty class folders are skipped

    Raises:
        DatasetError: A required class directory is missing or holds no PNG/JPEG file
    """
    root = Path(root)
    samples: List[Sample] = []
    for label in (ANIMAL, LITTER):
        directory = root / CLASS_DIRS[label]
        if not directory.is_dir():
            if not required:
                continue
            raise DatasetError(ERROR_MESSAGES["missing_class_dir"].format(path=directory))
        files = sorted(path for path in directory.iterdir() if path.is_file() and is_supported_image(path))
        if not files:
            if not required:
                continue
            raise DatasetError(ERROR_MESSAGES["empty_class_dir"].format(path=directory))
        samples.extend(Sample(path=path, label=label) for path in files)
    return samples


def _decode_shapes(samples: Sequence[Sample], workers: int) -> List[Tuple[int, int, int]]:
    def shape_of(sample: Sample):
        try:
            return decode_image(sample.path).shape
        except ImageLoadError as e:
            return e

    with ThreadPoolExecutor(max_workers=workers) as executor:
        results = list(executor.map(shape_of, samples))

    failures = [result for result in results if isinstance(result, ImageLoadError)]
    if failures:
        for failure in failures:
            logger.error(f"Undecodable image {failure}")
        paths = ", ".join(str(failure.path) for failure in failures)
        raise DatasetError(ERROR_MESSAGES["undecodable"].format(count=len(failures), paths=paths))
    return results


def _random_region(shape: Tuple[int, int, int], rng: Rng, min_fraction: float) -> Tuple[int, int, int, int]:
    _, height, width = shape
    crop_h = max(MIN_CROP_EXTENT, math.ceil(min_fraction * height))
    crop_w = max(MIN_CROP_EXTENT, math.ceil(min_fraction * width))
    crop_h += rng.randint(height - crop_h + 1)
    crop_w += rng.randint(width - crop_w + 1)
    top = rng.randint(height - crop_h + 1)
    left = rng.randint(width - crop_w + 1)
    return top, left, crop_h, crop_w


def augment_samples(samples: Sequence[Sample], shapes: Sequence[Tuple[int, int, int]], rng: Rng,
                    rotations: int = 0, crops: int = 0, crop_min_fraction: float = 0.6) -> List[Sample]:
    """
    Expand originals with recorded rotations and crops.

    Each original is followed by its rotations k = 1..rotations and then by
    `crops` seeded crop regions of at least crop_min_fraction of each side.
    Images smaller than the minimum crop extent get no crops.
    """
    expanded: List[Sample] = []
    for sample, shape in zip(samples, shapes):
        expanded.append(sample)
        for k in range(1, rotations + 1):
            expanded.append(Sample(path=sample.path, label=sample.label, origin=rotation_origin(k)))
        if shape[1] < MIN_CROP_EXTENT or shape[2] < MIN_CROP_EXTENT:
            if crops:
                logger.warning(f"{sample.path} is too small to crop")
            continue
        for _ in range(crops):
            region = _random_region(shape, rng, crop_min_fraction)
            check_region(shape, region)
            expanded.append(Sample(path=sample.path, label=sample.label, origin=crop_origin(region)))
    return expanded


def _by_label(samples: Sequence[Sample]) -> Dict[int, List[Sample]]:
    groups: Dict[int, List[Sample]] = {ANIMAL: [], LITTER: []}
    for sample in samples:
        groups[sample.label].append(sample)
    return groups


def balance_classes(samples: Sequence[Sample], rng: Rng) -> List[Sample]:
    """
    Subsample the majority class so both classes have the same count.

    The kept majority samples are a seeded uniform subset; the minority is
    untouched. The result is shuffled.
    """
    groups = _by_label(samples)
    for label, members in groups.items():
        if not members:
            raise DatasetError(f"class {CLASS_NAMES[label]} has no samples")

    target = min(len(members) for members in groups.values())
    keep = set()
    for label, members in groups.items():
        indices = [i for i, sample in enumerate(samples) if sample.label == label]
        keep.update(rng.shuffle(indices)[:target])

    balanced = [sample for i, sample in enumerate(samples) if i in keep]
    dropped = len(samples) - len(balanced)
    if dropped:
        logger.info(f"Balanced classes to {target} each, dropped {dropped} majority samples")
    return rng.shuffle(balanced)


def validation_count(fraction: float, count: int) -> int:
    """Samples of one class sent to validation: ceil(fraction * count)."""
    return math.ceil(round(fraction * count, 9))


def split_train_val(samples: Sequence[Sample], fraction: float, rng: Rng) -> Tuple[List[Sample], List[Sample]]:
    """
    Seeded, stratified train/validation split.

    Per class, ceil(fraction * count) samples go to validation. Samples
    sharing a source image always land on the same side. When source
    groups cannot hit the per-class target exactly, surplus validation
    samples (augmented ones first) are dropped and the larger train class
    is trimmed, so train stays exactly balanced.
    """
    if not 0.0 < fraction < 1.0:
        raise DatasetError(f"validation fraction must be in (0, 1), got {fraction}")

    shuffled = rng.shuffle(samples)
    val_ids, train_ids = set(), set()
    train_by_label: Dict[int, List[int]] = {}

    for label in (ANIMAL, LITTER):
        members = [i for i, sample in enumerate(shuffled) if sample.label == label]
        target = validation_count(fraction, len(members))
        if len(members) < 2 or target >= len(members):
            raise DatasetError(
                f"class {CLASS_NAMES[label]} has {len(members)} samples, too few to stratify"
            )

        groups: "OrderedDict[Path, List[int]]" = OrderedDict()
        for i in members:
            groups.setdefault(shuffled[i].source, []).append(i)

        val: List[int] = []
        remaining = list(groups.values())
        for group in list(remaining):
            if len(val) + len(group) <= target:
                val.extend(group)
                remaining.remove(group)
            if len(val) == target:
                break
        if len(val) < target:
            smallest = min(remaining, key=len)
            remaining.remove(smallest)
            val.extend(smallest)
            surplus = len(val) - target
            ordered = sorted(val, key=lambda i: (not shuffled[i].is_augmented, -i))
            dropped = set(ordered[:surplus])
            val = [i for i in val if i not in dropped]
            logger.warning(
                f"Dropped {surplus} {CLASS_NAMES[label]} validation sample(s) to keep whole source groups together"
            )

        val_ids.update(val)
        train_by_label[label] = [i for group in remaining for i in group]

    smaller = min(len(ids) for ids in train_by_label.values())
    for label, ids in train_by_label.items():
        if len(ids) > smaller:
            logger.warning(f"Trimmed {len(ids) - smaller} {CLASS_NAMES[label]} train sample(s) to keep train balanced")
        train_ids.update(sorted(ids)[:smaller])

    train = [sample for i, sample in enumerate(shuffled) if i in train_ids]
    val = [sample for i, sample in enumerate(shuffled) if i in val_ids]
    return train, val


def prepare(root: PathLike, config: PrepareConfig) -> SampleManifest:
    """
    Ingest <root>, augment, balance, split and build the manifest.

    The optional <root>/test/{animals,litter} folders become the test split
    as they are: no augmentation, no balancing.
    """
    root = Path(root)
    rng = Rng(config.seed)

    originals = scan_class_dirs(root)
    test_samples = scan_class_dirs(root / TEST_DIR, required=False)

    shapes = _decode_shapes(originals, config.decode_workers)
    if test_samples:
        _decode_shapes(test_samples, config.decode_workers)

    expanded = augment_samples(
        originals, shapes, rng,
        rotations=config.augment_rotations,
        crops=config.augment_crops,
        crop_min_fraction=config.crop_min_fraction,
    )
    logger.info(f"{len(originals)} original images expanded to {len(expanded)} samples")

    balanced = balance_classes(expanded, rng)
    train, val = split_train_val(balanced, config.val_fraction, rng)

    records = (
        [ManifestRecord("train", sample) for sample in train]
        + [ManifestRecord("val", sample) for sample in val]
        + [ManifestRecord("test", sample) for sample in test_samples]
    )
    return SampleManifest(seed=config.seed, records=records)


def write_manifest(manifest: SampleManifest, path: PathLike) -> None:
    """Write the manifest atomically; paths are stored relative to its directory."""
    path = Path(path)
    base = Path(os.path.abspath(path.parent))
    lines = [f"{MANIFEST_VERSION} seed={manifest.seed}"]
    for record in manifest.records:
        relative = PurePath(os.path.relpath(record.sample.path, base)).as_posix()
        fields = (record.split, str(record.sample.label), record.sample.origin, relative)
        for value in fields:
            if not validate_manifest_field(value):
                raise ManifestError(f"field {value!r} cannot be stored in a manifest")
        lines.append("\t".join(fields))

    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8", newline="\n") as handle:
        handle.write("\n".join(lines) + "\n")
    os.replace(tmp, path)


def read_manifest(path: PathLike) -> SampleManifest:
    """
    Parse a manifest file.

    Raises:
        ManifestError: Bad header, wrong version or malformed record, with its line number
    """
    path = Path(path)
    base = Path(os.path.abspath(path.parent))
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as e:
        raise ManifestError(f"cannot read manifest {path}: {e}")

    lines = text.split("\n")
    header = lines[0].split(" ")
    if len(header) != 2 or not header[1].startswith("seed="):
        raise ManifestError("expected header 'manifest-v1 seed=<u64>'", line=1)
    if header[0] != MANIFEST_VERSION:
        raise ManifestError(f"unsupported manifest version '{header[0]}'", line=1)
    try:
        seed = int(header[1][len("seed="):])
    except ValueError:
        raise ManifestError(f"invalid seed '{header[1]}'", line=1)
    if not 0 <= seed < 2 ** 64:
        raise ManifestError(f"seed {seed} is not an unsigned 64-bit integer", line=1)

    records: List[ManifestRecord] = []
    for number, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        fields = line.split("\t")
        if len(fields) != 4:
            raise ManifestError(f"expected 4 tab-separated fields, got {len(fields)}", line=number)
        split, label, origin, relative = fields
        if split not in MANIFEST_SPLITS:
            raise ManifestError(f"unknown split '{split}'", line=number)
        if label not in ("0", "1"):
            raise ManifestError(f"label '{label}' outside {{0,1}}", line=number)
        if not relative:
            raise ManifestError("empty path", line=number)
        try:
            sample = Sample(path=base / relative, label=int(label), origin=origin)
        except ValueError as e:
            raise ManifestError(str(e), line=number)
        records.append(ManifestRecord(split, sample))
    return SampleManifest(seed=seed, records=records)
