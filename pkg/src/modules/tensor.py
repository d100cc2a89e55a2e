"""
Dense tensor primitives and the seeded random source.

Tensors are plain row-major ``numpy.ndarray`` values of rank 1 to 4.
Training data is float32; the gradient-check path may use float64.
Every public operation returns a new array and refuses to store NaN or
infinity.
"""

import math
from typing import Iterable, List, Sequence, Tuple, TypeVar, Union

import numpy as np

from src.utils.errors import NonFiniteError, ShapeMismatchError, TensorError

T = TypeVar("T")

DTYPE = np.float32
MAX_RANK = 4

_ELEMENTWISE_OPS = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
}


def _check_shape(shape: Sequence[int]) -> Tuple[int, ...]:
    shape = tuple(int(extent) for extent in shape)
    if not 1 <= len(shape) <= MAX_RANK:
        raise TensorError(f"rank must be between 1 and {MAX_RANK}, got {len(shape)}")
    if any(extent <= 0 for extent in shape):
        raise TensorError(f"extents must be positive, got {shape}")
    return shape


def ensure_finite(array: np.ndarray, what: str = "tensor") -> np.ndarray:
    """Raise NonFiniteError if the array holds NaN or infinity."""
    if not np.all(np.isfinite(array)):
        raise NonFiniteError(f"{what} contains non-finite values")
    return array


def tensor_create(shape: Sequence[int], fill: Union[float, Iterable[float]] = 0.0,
                  dtype=DTYPE) -> np.ndarray:
    """
    Build a tensor of the given shape.

    Args:
        shape: Positive extents, rank 1 to 4
        fill: A scalar broadcast to every element, or exactly prod(shape)
            values in row-major order
        dtype: Element type, float32 by default

    Returns:
        np.ndarray: The new tensor
    """
    shape = _check_shape(shape)
    size = math.prod(shape)

    if np.isscalar(fill):
        if not math.isfinite(float(fill)):
            raise NonFiniteError(f"fill value {fill} is not finite")
        return np.full(shape, fill, dtype=dtype)

    values = np.asarray(list(fill), dtype=dtype)
    if values.size != size:
        raise ShapeMismatchError(
            f"{values.size} values cannot fill shape {shape} ({size} elements)"
        )
    return ensure_finite(values.reshape(shape))


def elementwise(a: np.ndarray, b: np.ndarray, op: str) -> np.ndarray:
    """
    Apply add, sub or mul element by element.

    Shapes must match exactly; there is no broadcasting.
    """
    if op not in _ELEMENTWISE_OPS:
        raise TensorError(f"unknown elementwise op '{op}'")
    if a.shape != b.shape:
        raise ShapeMismatchError(f"shape {a.shape} does not match {b.shape}")
    with np.errstate(over="ignore", invalid="ignore"):
        result = _ELEMENTWISE_OPS[op](a, b)
    return ensure_finite(result, f"{op} result")


def scale(a: np.ndarray, s: float) -> np.ndarray:
    """Multiply every element by a finite scalar."""
    if not math.isfinite(s):
        raise NonFiniteError(f"scale factor {s} is not finite")
    with np.errstate(over="ignore"):
        result = a * a.dtype.type(s)
    return ensure_finite(result, "scaled tensor")


def flat_index(shape: Sequence[int], index: Sequence[int]) -> int:
    """Row-major flat position of a multi-index."""
    return int(np.ravel_multi_index(tuple(index), tuple(shape)))


def multi_index(shape: Sequence[int], flat: int) -> Tuple[int, ...]:
    """Inverse of flat_index."""
    return tuple(int(i) for i in np.unravel_index(flat, tuple(shape)))


class Rng:
    """
    Seeded random source.

    The bit stream is numpy's PCG64 seeded with the 64-bit seed, which is
    the same on every platform. Shuffling is Fisher–Yates from the top:
    for i = n-1 down to 1, draw j = integers(0, i + 1) and swap items i
    and j.
    """

    def __init__(self, seed: int):
        if not 0 <= seed < 2 ** 64:
            raise TensorError(f"seed must be an unsigned 64-bit integer, got {seed}")
        self.seed = int(seed)
        self.generator = np.random.Generator(np.random.PCG64(self.seed))

    def next_u64(self) -> int:
        return int(self.generator.integers(0, 2 ** 64, dtype=np.uint64))

    def randint(self, high: int) -> int:
        """Uniform integer in [0, high)."""
        return int(self.generator.integers(0, high))

    def shuffle(self, items: Sequence[T]) -> List[T]:
        """Return a new list holding a seeded permutation of items."""
        result = list(items)
        for i in range(len(result) - 1, 0, -1):
            j = int(self.generator.integers(0, i + 1))
            result[i], result[j] = result[j], result[i]
        return result

    def init_weights(self, shape: Sequence[int], fan_in: int, dtype=DTYPE) -> np.ndarray:
        """
        He-uniform initialization for ReLU layers.

        Samples lie in [-b, b] with b = sqrt(6 / fan_in).
        """
        if fan_in < 1:
            raise TensorError(f"fan_in must be >= 1, got {fan_in}")
        shape = _check_shape(shape)
        bound = math.sqrt(6.0 / fan_in)
        return self.generator.uniform(-bound, bound, size=shape).astype(dtype)


def rng_shuffle(rng: Rng, items: Sequence[T]) -> List[T]:
    return rng.shuffle(items)


def rng_init_weights(rng: Rng, shape: Sequence[int], fan_in: int) -> np.ndarray:
    return rng.init_weights(shape, fan_in)
