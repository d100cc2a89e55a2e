"""
Image decoding, standardization and the offline augmentation transforms.

Images are float32 tensors [3, H, W] holding RGB values in [0, 1].
Standardization resizes to size x size with bilinear interpolation
(cv2.INTER_LINEAR: sample centres at (d + 0.5) * src/dst - 0.5, edge
pixels clamped), without preserving the aspect ratio so nothing is
cropped away.
"""

from pathlib import Path
from typing import Tuple, Union

import cv2
import numpy as np

from src.config import IMAGE_SIZE, MIN_CROP_EXTENT
from src.modules.tensor import DTYPE
from src.utils.errors import ImageLoadError, TensorError
from src.utils.validators import is_supported_image

PathLike = Union[str, Path]
Region = Tuple[int, int, int, int]


def decode_image(path: PathLike) -> np.ndarray:
    """
    Read a PNG or JPEG file at its native resolution.

    Alpha is dropped, channels are reordered to RGB and values scaled by 1/255.

    Returns:
        np.ndarray: float32 [3, H, W]
    """
    path = Path(path)
    if not path.is_file():
        raise ImageLoadError(path, "file not found")
    if not is_supported_image(path):
        raise ImageLoadError(path, f"unsupported format '{path.suffix}', expected PNG or JPEG")

    raw = np.fromfile(str(path), dtype=np.uint8)
    if raw.size == 0:
        raise ImageLoadError(path, "empty file")
    bgr = cv2.imdecode(raw, cv2.IMREAD_COLOR)
    if bgr is None:
        raise ImageLoadError(path, "could not decode image")
    if bgr.shape[0] == 0 or bgr.shape[1] == 0:
        raise ImageLoadError(path, "zero-area image")

    rgb = cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB)
    return np.ascontiguousarray(rgb.transpose(2, 0, 1), dtype=DTYPE) / DTYPE(255.0)


def resize_image(img: np.ndarray, size: int = IMAGE_SIZE) -> np.ndarray:
    """Bilinear resize of [3, H, W] to [3, size, size]; identity when already that size."""
    if img.ndim != 3 or img.shape[1] == 0 or img.shape[2] == 0:
        raise TensorError(f"cannot resize image of shape {img.shape}")
    if img.shape[1] == size and img.shape[2] == size:
        return img.copy()
    hwc = np.ascontiguousarray(img.transpose(1, 2, 0), dtype=DTYPE)
    resized = cv2.resize(hwc, (size, size), interpolation=cv2.INTER_LINEAR)
    if resized.ndim == 2:
        resized = resized[:, :, None]
    return np.ascontiguousarray(resized.transpose(2, 0, 1))


def load_image(path: PathLike, size: int = IMAGE_SIZE) -> np.ndarray:
    """Decode and standardize one image to [3, size, size] in [0, 1]."""
    return resize_image(decode_image(path), size)


def augment_rotate(img: np.ndarray, k: int) -> np.ndarray:
    """Lossless counter-clockwise rotation by k quarter turns, k in {1, 2, 3}."""
    if k not in (1, 2, 3):
        raise TensorError(f"rotation must be 1, 2 or 3 quarter turns, got {k}")
    return np.ascontiguousarray(np.rot90(img, k=k, axes=(1, 2)))


def check_region(shape: Tuple[int, ...], region: Region) -> None:
    top, left, height, width = region
    _, image_h, image_w = shape
    if height < MIN_CROP_EXTENT or width < MIN_CROP_EXTENT:
        raise TensorError(f"crop {height}x{width} is smaller than {MIN_CROP_EXTENT}x{MIN_CROP_EXTENT}")
    if top < 0 or left < 0 or top + height > image_h or left + width > image_w:
        raise TensorError(f"crop {region} does not fit inside a {image_h}x{image_w} image")


def augment_crop(img: np.ndarray, region: Region, size: int = IMAGE_SIZE) -> np.ndarray:
    """
    Cut region = (top, left, height, width) out of img and standardize it.

    Returns:
        np.ndarray: [3, size, size]
    """
    check_region(img.shape, region)
    top, left, height, width = region
    return resize_image(img[:, top:top + height, left:left + width], size)
