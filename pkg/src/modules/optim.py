"""
Adam optimizer, binary cross-entropy on logits and per-batch metrics.
"""

import math
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from src.config import (
    ADAM_BETA1,
    ADAM_BETA2,
    ADAM_EPSILON,
    ANIMAL,
    DECISION_THRESHOLD,
    LEARNING_RATE,
    LITTER,
)
from src.modules.layers import sigmoid
from src.modules.model import ModelParams
from src.utils.errors import NonFiniteError, ShapeMismatchError, TensorError

# Probabilities are clipped this far from 0 and 1 before taking logs.
PROBABILITY_EPSILON = 1e-7

ParamsLike = Union[ModelParams, Mapping[str, np.ndarray]]


def _named(params: ParamsLike) -> Mapping[str, np.ndarray]:
    return params.named_tensors() if isinstance(params, ModelParams) else params


@dataclass
class AdamState:
    """Step count and per-parameter moment estimates."""

    lr: float = LEARNING_RATE
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPSILON
    t: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: ParamsLike, lr: float = LEARNING_RATE, beta1: float = ADAM_BETA1,
                   beta2: float = ADAM_BETA2, eps: float = ADAM_EPSILON) -> "AdamState":
        """Fresh state with zero moments mirroring params name for name."""
        named = _named(params)
        return cls(
            lr=lr, beta1=beta1, beta2=beta2, eps=eps, t=0,
            m={name: np.zeros_like(tensor) for name, tensor in named.items()},
            v={name: np.zeros_like(tensor) for name, tensor in named.items()},
        )


def adam_step(params: ParamsLike, grads: ParamsLike, state: AdamState) -> Tuple[ParamsLike, AdamState]:
    """
    One Adam update with bias correction, applied to params in place.

        t ← t + 1
        m ← β1·m + (1 − β1)·g
        v ← β2·v + (1 − β2)·g²
        θ ← θ − lr · m̂ / (√v̂ + ε),  m̂ = m / (1 − β1^t),  v̂ = v / (1 − β2^t)

    Returns:
        (params, state), the same objects that were passed in
    """
    named = _named(params)
    named_grads = _named(grads)

    for name, tensor in named.items():
        if name not in named_grads:
            raise ShapeMismatchError(f"no gradient for parameter '{name}'")
        grad = named_grads[name]
        if grad.shape != tensor.shape:
            raise ShapeMismatchError(f"gradient of '{name}' has shape {grad.shape}, expected {tensor.shape}")
        if not np.all(np.isfinite(grad)):
            raise NonFiniteError(f"gradient of '{name}' is not finite")
        if name not in state.m:
            state.m[name] = np.zeros_like(tensor)
            state.v[name] = np.zeros_like(tensor)

    state.t += 1
    bias1 = 1.0 - state.beta1 ** state.t
    bias2 = 1.0 - state.beta2 ** state.t

    for name, tensor in named.items():
        g = named_grads[name]
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        m_hat = m / bias1
        v_hat = v / bias2
        tensor -= (state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(tensor.dtype, copy=False)

    return params, state


def bce_loss_from_logit(z: Union[float, np.ndarray],
                        y: Union[int, np.ndarray]) -> Tuple[Union[float, np.ndarray], Union[float, np.ndarray]]:
    """
    Binary cross-entropy of sigmoid(z) against y in {0, 1}.

    Uses max(z, 0) − z·y + log(1 + e^(−|z|)), which never overflows.

    Returns:
        (loss, dloss/dz) with dloss/dz = sigmoid(z) − y
    """
    if np.isscalar(z):
        if not math.isfinite(z):
            raise NonFiniteError(f"logit {z} is not finite")
        loss = max(z, 0.0) - z * y + math.log1p(math.exp(-abs(z)))
        return loss, sigmoid(z) - y
    z = np.asarray(z)
    y = np.asarray(y, dtype=z.dtype)
    loss = np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))
    return loss, sigmoid(z) - y


def predict_labels(probs: np.ndarray) -> np.ndarray:
    """Litter (1) iff p > 0.5; a tie at exactly 0.5 predicts Animal (0)."""
    return np.where(np.asarray(probs) > DECISION_THRESHOLD, LITTER, ANIMAL)


def batch_loss_acc(probs: np.ndarray, labels: Sequence[int],
                   logits: Optional[np.ndarray] = None) -> Tuple[float, float]:
    """
    Mean binary cross-entropy and accuracy of a batch.

    The loss comes from the logits when they are given, otherwise from the
    probabilities clipped to [1e-7, 1 - 1e-7].
    """
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    if probs.size == 0:
        raise TensorError("cannot compute metrics of an empty batch")
    if probs.shape != labels.shape:
        raise ShapeMismatchError(f"{probs.size} probabilities for {labels.size} labels")
    if not np.all((labels == ANIMAL) | (labels == LITTER)):
        raise TensorError("labels must be 0 or 1")

    if logits is not None:
        losses, _ = bce_loss_from_logit(np.asarray(logits, dtype=np.float64), labels)
    else:
        clipped = np.clip(probs, PROBABILITY_EPSILON, 1.0 - PROBABILITY_EPSILON)
        losses = -(labels * np.log(clipped) + (1 - labels) * np.log(1.0 - clipped))

    accuracy = float(np.mean(predict_labels(probs) == labels))
    return float(np.mean(losses)), accuracy


@dataclass
class EpochMetrics:
    """Frozen-weight metrics recorded after one epoch."""

    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float

    def __post_init__(self):
        for name in ("train_acc", "val_acc"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {value}")
        for name in ("train_loss", "val_loss"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0.0):
                raise ValueError(f"{name} must be a finite value >= 0, got {value}")
