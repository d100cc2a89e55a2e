"""
Validation utilities for the debris classifier.
Argument parsers for the CLI and field checks for the manifest format.
"""

import argparse
from pathlib import Path
from typing import Union

from src.config import IMAGE_EXTENSIONS

U64_MAX = 2 ** 64 - 1


def positive_int(value: str) -> int:
    """argparse type: integer >= 1."""
    try:
        number = int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got '{value}'")
    if number < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {number}")
    return number


def non_negative_int(value: str) -> int:
    """argparse type: integer >= 0."""
    try:
        number = int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got '{value}'")
    if number < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {number}")
    return number


def seed_u64(value: str) -> int:
    """argparse type: unsigned 64-bit seed."""
    number = non_negative_int(value)
    if number > U64_MAX:
        raise argparse.ArgumentTypeError(f"seed must fit in 64 bits, got {number}")
    return number


def rotation_count(value: str) -> int:
    """argparse type: number of quarter-turn rotations, 0..3."""
    number = non_negative_int(value)
    if number > 3:
        raise argparse.ArgumentTypeError(f"must be between 0 and 3, got {number}")
    return number


def open_fraction(value: str) -> float:
    """argparse type: real strictly between 0 and 1."""
    try:
        number = float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got '{value}'")
    if not 0.0 < number < 1.0:
        raise argparse.ArgumentTypeError(f"must be strictly between 0 and 1, got {value}")
    return number


def positive_float(value: str) -> float:
    """argparse type: finite real > 0."""
    try:
        number = float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got '{value}'")
    if not number > 0.0 or number == float("inf"):
        raise argparse.ArgumentTypeError(f"must be a finite number > 0, got {value}")
    return number


def unit_interval(value: str) -> float:
    """argparse type: real in [0, 1]."""
    try:
        number = float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got '{value}'")
    if not 0.0 <= number <= 1.0:
        raise argparse.ArgumentTypeError(f"must be between 0 and 1, got {value}")
    return number


def positive_fraction(value: str) -> float:
    """argparse type: real in (0, 1]."""
    try:
        number = float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got '{value}'")
    if not 0.0 < number <= 1.0:
        raise argparse.ArgumentTypeError(f"must be above 0 and at most 1, got {value}")
    return number


def is_supported_image(path: Union[str, Path]) -> bool:
    """Check whether a file name carries a PNG or JPEG extension."""
    return Path(path).suffix.lower() in IMAGE_EXTENSIONS


def validate_manifest_field(value: str) -> bool:
    """
    Check that a value can be stored as one manifest field.
    Fields are tab-separated and one record per line.
    """
    return bool(value) and "\t" not in value and "\n" not in value and "\r" not in value
