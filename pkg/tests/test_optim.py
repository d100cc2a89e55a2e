"""
Unit tests for Adam, the logit cross-entropy and the batch metrics.
"""

import math

import numpy as np
import pytest

from src.config import TrainConfig
from src.modules.model import ModelParams
from src.modules.optim import (
    AdamState,
    EpochMetrics,
    adam_step,
    batch_loss_acc,
    bce_loss_from_logit,
    predict_labels,
)
from src.modules.tensor import Rng
from src.utils.errors import NonFiniteError, ShapeMismatchError, TensorError


def textbook_adam(theta, steps, lr=0.1, beta1=0.9, beta2=0.999, eps=1e-8):
    """Adam on f(θ) = θ² written out in plain floats."""
    m = v = 0.0
    trajectory = []
    for t in range(1, steps + 1):
        g = 2.0 * theta
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        theta = theta - lr * m_hat / (math.sqrt(v_hat) + eps)
        trajectory.append(theta)
    return trajectory


def test_adam_matches_textbook_on_quadratic():
    """Test 100 steps on θ² from θ = 1 against an independent recurrence."""
    params = {"theta": np.array([1.0])}
    state = AdamState.for_params(params, lr=0.1)
    expected = textbook_adam(1.0, 100)
    for t, value in enumerate(expected, start=1):
        adam_step(params, {"theta": 2.0 * params["theta"]}, state)
        assert state.t == t
        assert params["theta"][0] == pytest.approx(value, abs=1e-9)
    assert abs(params["theta"][0]) < 0.05


def test_adam_zero_gradient_is_noop():
    params = ModelParams.initialize(TrainConfig().reduced_clone(), Rng(0))
    before = params.copy()
    state = AdamState.for_params(params)
    adam_step(params, params.zeros_like(), state)
    for name, tensor in params.named_tensors().items():
        assert np.array_equal(tensor, before.named_tensors()[name])
    assert state.t == 1


def test_adam_first_step_is_lr_sign():
    """Test bias correction makes the first step lr in the direction of -g."""
    params = {"w": np.array([0.0, 0.0])}
    state = AdamState.for_params(params, lr=1e-3)
    adam_step(params, {"w": np.array([0.1, -0.1])}, state)
    np.testing.assert_allclose(params["w"], [-1e-3, 1e-3], atol=1e-6)


def test_adam_scale_equivariant_first_step():
    updates = []
    for c in (1.0, 1e3):
        params = {"w": np.zeros(3)}
        state = AdamState.for_params(params, eps=1e-12)
        adam_step(params, {"w": c * np.array([0.5, -2.0, 1e-3])}, state)
        updates.append(params["w"].copy())
    np.testing.assert_allclose(updates[0], updates[1], atol=1e-6)


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
@pytest.mark.parametrize("magnitude", [1e6, 1e-30])
def test_adam_extreme_gradients_stay_finite(dtype, magnitude):
    params = {"w": np.ones(4, dtype=dtype)}
    state = AdamState.for_params(params)
    for _ in range(3):
        adam_step(params, {"w": np.full(4, magnitude, dtype=dtype)}, state)
    assert np.all(np.isfinite(params["w"]))
    assert np.all(state.v["w"] >= 0)


def test_adam_moments_mirror_params():
    params = ModelParams.initialize(TrainConfig().reduced_clone(), Rng(1))
    state = AdamState.for_params(params)
    assert set(state.m) == set(params.named_tensors())
    for name, tensor in params.named_tensors().items():
        assert state.v[name].shape == tensor.shape


def test_adam_rejects_bad_gradients():
    params = {"w": np.ones(2)}
    state = AdamState.for_params(params)
    with pytest.raises(ShapeMismatchError):
        adam_step(params, {"w": np.ones(3)}, state)
    with pytest.raises(ShapeMismatchError):
        adam_step(params, {}, state)
    with pytest.raises(NonFiniteError):
        adam_step(params, {"w": np.array([1.0, np.nan])}, state)
    assert state.t == 0
    assert params["w"].tolist() == [1.0, 1.0]


@pytest.mark.parametrize("y", [0, 1])
def test_bce_at_zero_is_ln2(y):
    loss, grad = bce_loss_from_logit(0.0, y)
    assert loss == pytest.approx(math.log(2))
    assert grad == pytest.approx(0.5 - y)


def test_bce_large_logit_no_overflow():
    loss, grad = bce_loss_from_logit(100.0, 1)
    assert 0.0 <= loss <= 1e-8
    assert abs(grad) < 1e-12
    losses, _ = bce_loss_from_logit(np.array([-1000.0, 1000.0]), np.array([0, 1]))
    assert np.all(np.isfinite(losses))


@pytest.mark.parametrize("z", [-3.0, -1.0, 0.0, 1.0, 3.0])
@pytest.mark.parametrize("y", [0, 1])
def test_bce_gradient_finite_differences(z, y):
    h = 1e-5
    numeric = (bce_loss_from_logit(z + h, y)[0] - bce_loss_from_logit(z - h, y)[0]) / (2 * h)
    analytic = bce_loss_from_logit(z, y)[1]
    assert abs(analytic - numeric) <= 1e-6 * max(abs(analytic), 1e-8)


def test_bce_non_negative_and_gradient_bounded():
    z = np.linspace(-40, 40, 81)
    for y in (0, 1):
        losses, grads = bce_loss_from_logit(z, np.full(z.shape, y))
        assert np.all(losses >= 0)
        assert np.all(np.abs(grads) <= 1)


def test_bce_rejects_non_finite_scalar():
    with pytest.raises(NonFiniteError):
        bce_loss_from_logit(float("inf"), 1)


def test_predict_labels_tie_goes_to_animal():
    assert predict_labels(np.array([0.5, 0.5000001, 0.1, 0.9])).tolist() == [0, 1, 0, 1]


def test_batch_loss_acc_all_half():
    loss, accuracy = batch_loss_acc(np.full(4, 0.5), [0, 1, 1, 0])
    assert loss == pytest.approx(math.log(2))
    assert accuracy == 0.5


def test_batch_loss_acc_perfect():
    _, accuracy = batch_loss_acc(np.array([1.0, 1e-9, 1.0]), [1, 0, 1])
    assert accuracy == 1.0


def test_batch_loss_acc_mixed():
    _, accuracy = batch_loss_acc(np.array([0.9, 0.2, 0.6, 0.4]), [1, 0, 0, 1])
    assert accuracy == 0.5


def test_batch_loss_acc_from_logits_matches_probs():
    logits = np.array([-2.0, 0.5, 3.0])
    probs = 1 / (1 + np.exp(-logits))
    from_logits, _ = batch_loss_acc(probs, [0, 1, 0], logits=logits)
    from_probs, _ = batch_loss_acc(probs, [0, 1, 0])
    assert from_logits == pytest.approx(from_probs, rel=1e-9)


def test_batch_loss_acc_errors():
    with pytest.raises(TensorError):
        batch_loss_acc(np.array([]), [])
    with pytest.raises(ShapeMismatchError):
        batch_loss_acc(np.array([0.5, 0.5]), [1])
    with pytest.raises(TensorError):
        batch_loss_acc(np.array([0.5]), [2])


def test_epoch_metrics_validation():
    EpochMetrics(1, 0.5, 1.0, 0.7, 0.0)
    with pytest.raises(ValueError):
        EpochMetrics(1, 0.5, 1.2, 0.7, 0.5)
    with pytest.raises(ValueError):
        EpochMetrics(1, -0.1, 0.5, 0.7, 0.5)
    with pytest.raises(ValueError):
        EpochMetrics(1, 0.5, 0.5, float("nan"), 0.5)
