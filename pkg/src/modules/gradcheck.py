"""
Finite-difference verification of analytic gradients.
"""

from dataclasses import dataclass
from typing import Callable, Dict, Mapping, Tuple

import numpy as np

from src.utils.errors import NonFiniteError, TensorError

RELATIVE_FLOOR = 1e-8

LossAndGrads = Tuple[float, Mapping[str, np.ndarray]]


@dataclass
class GradcheckReport:
    max_relative_error: float
    parameter: str
    index: Tuple[int, ...]


def relative_error(analytic: float, numeric: float, floor: float = RELATIVE_FLOOR) -> float:
    """|a - n| / max(|a|, |n|, floor); the floor keeps two near-zero values from exploding."""
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def _check_epsilon(epsilon: float) -> None:
    if not 0.0 < epsilon <= 1e-1:
        raise TensorError(f"epsilon must be in (0, 0.1], got {epsilon}")


def _finite_loss(value: float) -> float:
    value = float(value)
    if not np.isfinite(value):
        raise NonFiniteError(f"non-finite loss {value} during gradient check")
    return value


def numerical_gradient(f: Callable[[np.ndarray], float], x: np.ndarray,
                       epsilon: float = 1e-3) -> np.ndarray:
    """
    Central differences of a scalar function with respect to every entry of x.

    x is perturbed in place and restored.
    """
    _check_epsilon(epsilon)
    grad = np.zeros(x.shape, dtype=np.float64)
    for index in np.ndindex(x.shape):
        original = x[index]
        x[index] = original + epsilon
        plus = _finite_loss(f(x))
        x[index] = original - epsilon
        minus = _finite_loss(f(x))
        x[index] = original
        grad[index] = (plus - minus) / (2.0 * epsilon)
    return grad


def gradcheck(fn: Callable[[Mapping[str, np.ndarray], object], LossAndGrads],
              params: Mapping[str, np.ndarray], inputs: object,
              epsilon: float = 1e-3, floor: float = RELATIVE_FLOOR) -> GradcheckReport:
    """
    Compare analytic gradients with central differences, parameter by parameter.

    Args:
        fn: Maps (params, inputs) to (loss, gradients by parameter name)
        params: Named parameter tensors; copied to float64, never modified
        inputs: Passed through to fn unchanged
        epsilon: Perturbation size in (0, 0.1]
        floor: Smallest denominator of the relative error; raise it when
            epsilon is tiny and round-off dominates near-zero gradients

    Returns:
        GradcheckReport: Worst relative error with its parameter name and index
    """
    _check_epsilon(epsilon)
    work: Dict[str, np.ndarray] = {
        name: np.array(tensor, dtype=np.float64, copy=True) for name, tensor in params.items()
    }
    loss, analytic = fn(work, inputs)
    _finite_loss(loss)
    analytic = {name: np.array(grad, dtype=np.float64, copy=True) for name, grad in analytic.items()}

    worst = GradcheckReport(max_relative_error=0.0, parameter="", index=())
    for name, tensor in work.items():
        if analytic[name].shape != tensor.shape:
            raise TensorError(f"gradient of '{name}' has shape {analytic[name].shape}, expected {tensor.shape}")

        def loss_at(_: np.ndarray) -> float:
            return fn(work, inputs)[0]

        numeric = numerical_gradient(loss_at, tensor, epsilon)
        for index in np.ndindex(tensor.shape):
            error = relative_error(analytic[name][index], numeric[index], floor)
            if error > worst.max_relative_error or not worst.parameter:
                worst = GradcheckReport(max_relative_error=error, parameter=name, index=index)
    return worst
