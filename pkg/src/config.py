"""
Configuration module for the debris classifier.
Contains all constants, settings, and configuration parameters.
"""

import os
from typing import List, NamedTuple, Tuple

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, field_validator

load_dotenv()

# Logging
LOG_LEVEL = os.getenv("DEBRIS_LOG_LEVEL", "INFO")
LOG_FILE = os.getenv("DEBRIS_LOG_FILE") or None

# Processing limits
DECODE_WORKERS = int(os.getenv("DEBRIS_DECODE_WORKERS", 4))

# Classes
ANIMAL = 0
LITTER = 1
CLASS_NAMES = {ANIMAL: "Animal", LITTER: "Litter"}
CLASS_DIRS = {ANIMAL: "animals", LITTER: "litter"}
TEST_DIR = "test"

# Images
IMAGE_SIZE = 140
CHANNELS = 3
IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg")
MIN_CROP_EXTENT = 8

# Architecture
FILTERS = 32
KERNEL_SIZES = (3, 2, 3)
POOL = 2

# Training
EPOCHS = 95
VAL_FRACTION = 0.1
BATCH_SIZE = 32
LEARNING_RATE = 1e-3
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPSILON = 1e-8
REPLICATES = 10
DECISION_THRESHOLD = 0.5

# File formats
MANIFEST_VERSION = "manifest-v1"
MANIFEST_SPLITS = ("train", "val", "test")
MODEL_MAGIC = b"MDCNN1"
MODEL_FORMAT_VERSION = 1
HISTORY_COLUMNS = ("epoch", "train_loss", "train_acc", "val_loss", "val_acc")

# Augmentation defaults for prepare
AUGMENT_ROTATIONS = 0
AUGMENT_CROPS = 0
CROP_MIN_FRACTION = 0.6

# Error messages
ERROR_MESSAGES = {
    "missing_class_dir": "class directory not found: {path}",
    "empty_class_dir": "no PNG/JPEG images in {path}",
    "undecodable": "{count} undecodable image(s): {paths}",
    "empty_split": "split '{split}' has no samples",
    "unbalanced_train": "train split is not balanced: {counts}",
    "non_finite_loss": "non-finite loss",
    "below_target": "accuracy {accuracy:.2f} is below the required {target:.2f}",
}


class LayerShapes(NamedTuple):
    """Per-image activation shapes of the conv stack."""

    chain: List[Tuple[int, ...]]
    head_length: int


class TrainConfig(BaseModel):
    """Every hyperparameter of a training run."""

    model_config = ConfigDict(frozen=True)

    epochs: int = Field(EPOCHS, ge=1)
    val_fraction: float = Field(VAL_FRACTION, gt=0.0, lt=1.0)
    image_size: int = Field(IMAGE_SIZE, ge=1)
    channels: int = Field(CHANNELS, ge=1)
    filters: int = Field(FILTERS, ge=1)
    kernel_sizes: Tuple[int, int, int] = KERNEL_SIZES
    pool: int = POOL
    batch_size: int = Field(BATCH_SIZE, ge=1)
    lr: float = Field(LEARNING_RATE, gt=0.0)
    seed: int = Field(0, ge=0, lt=2 ** 64)
    replicates: int = Field(REPLICATES, ge=1)
    replicate_workers: int = Field(1, ge=1)
    decode_workers: int = Field(DECODE_WORKERS, ge=1)
    skip_unreadable: bool = False

    @field_validator("kernel_sizes")
    @classmethod
    def _positive_kernels(cls, value: Tuple[int, int, int]) -> Tuple[int, int, int]:
        if any(k < 1 for k in value):
            raise ValueError(f"kernel sizes must be positive, got {value}")
        return value

    @field_validator("pool")
    @classmethod
    def _two_by_two_pool(cls, value: int) -> int:
        if value != 2:
            raise ValueError("only 2x2 max pooling is supported")
        return value

    def architecture(self) -> LayerShapes:
        """
        Shape chain conv→pool three times, then flatten.

        Raises:
            ValueError: If the image is too small for the kernels
        """
        size = self.image_size
        chain: List[Tuple[int, ...]] = []
        for kernel in self.kernel_sizes:
            if size < kernel:
                raise ValueError(f"{size}px activation is smaller than a {kernel}x{kernel} kernel")
            size = size - kernel + 1
            chain.append((self.filters, size, size))
            if size < self.pool:
                raise ValueError(f"{size}px activation is smaller than the pooling window")
            size //= self.pool
            chain.append((self.filters, size, size))
        return LayerShapes(chain=chain, head_length=self.filters * size * size)

    def reduced_clone(self, image_size: int = 12, filters: int = 4,
                      kernel_sizes: Tuple[int, int, int] = (3, 2, 1)) -> "TrainConfig":
        """Small variant of the same architecture for whole-model gradient checks."""
        return self.model_copy(update={
            "image_size": image_size,
            "filters": filters,
            "kernel_sizes": kernel_sizes,
        })


class PrepareConfig(BaseModel):
    """Options of the dataset preparation step."""

    model_config = ConfigDict(frozen=True)

    seed: int = Field(0, ge=0, lt=2 ** 64)
    val_fraction: float = Field(VAL_FRACTION, gt=0.0, lt=1.0)
    augment_rotations: int = Field(AUGMENT_ROTATIONS, ge=0, le=3)
    augment_crops: int = Field(AUGMENT_CROPS, ge=0)
    crop_min_fraction: float = Field(CROP_MIN_FRACTION, gt=0.0, le=1.0)
    decode_workers: int = Field(DECODE_WORKERS, ge=1)
