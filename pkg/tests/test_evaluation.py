"""
Unit tests for the confusion matrix and its derived metrics.
"""

import numpy as np
import pytest

from src.config import ANIMAL, LITTER, TrainConfig
from src.modules.evaluation import (
    ClassificationMetrics,
    ConfusionMatrix,
    confusion_from_predictions,
    evaluate,
    format_csv,
    format_matrix,
    format_metrics,
    metrics_from_matrix,
    predict_probabilities,
)
from src.modules.model import ModelParams
from src.utils.errors import DatasetError, TensorError


@pytest.fixture
def reference_matrix():
    return ConfusionMatrix(tp=47, fn=8, fp=3, tn=42)


def test_reference_matrix_metrics(reference_matrix):
    metrics = metrics_from_matrix(reference_matrix)
    assert metrics.accuracy == pytest.approx(0.89)
    assert metrics.precision == pytest.approx(47 / 50)
    assert round(metrics.precision, 2) == 0.94
    assert metrics.recall == pytest.approx(47 / 55)
    assert metrics.hazard_rate == pytest.approx(8 / 55)
    assert metrics.recall + metrics.hazard_rate == pytest.approx(1.0)


def test_margins(reference_matrix):
    assert reference_matrix.total == 100
    assert reference_matrix.row_sums() == {ANIMAL: 55, LITTER: 45}
    assert reference_matrix.column_sums() == {ANIMAL: 50, LITTER: 50}


def test_confusion_from_predictions():
    actual = [0, 0, 1, 1, 0, 1]
    predicted = [0, 1, 0, 1, 0, 1]
    assert confusion_from_predictions(actual, predicted) == ConfusionMatrix(tp=2, fn=1, fp=1, tn=2)


def test_always_animal_predictor():
    """Test a degenerate classifier on 55 animals and 45 litter items."""
    actual = [ANIMAL] * 55 + [LITTER] * 45
    cm = confusion_from_predictions(actual, [ANIMAL] * 100)
    assert cm == ConfusionMatrix(tp=55, fn=0, fp=45, tn=0)
    metrics = metrics_from_matrix(cm)
    assert metrics.accuracy == pytest.approx(0.55)
    assert metrics.recall == 1.0
    assert metrics.hazard_rate == 0.0


def test_undefined_ratios_are_none():
    metrics = metrics_from_matrix(ConfusionMatrix(tp=0, fn=0, fp=0, tn=5))
    assert metrics.accuracy == 1.0
    assert metrics.precision is None
    assert metrics.recall is None
    assert metrics.hazard_rate is None
    assert "precision\tundefined" in format_metrics(metrics)


def test_empty_matrix_rejected():
    with pytest.raises(ValueError):
        metrics_from_matrix(ConfusionMatrix())


def test_negative_counts_rejected():
    with pytest.raises(ValueError):
        ConfusionMatrix(tp=-1)


def test_prediction_errors():
    with pytest.raises(TensorError):
        confusion_from_predictions([0, 1], [0])
    with pytest.raises(TensorError):
        confusion_from_predictions([0, 2], [0, 1])


def test_format_matrix(reference_matrix):
    lines = format_matrix(reference_matrix)
    assert lines[0].startswith("n = 100")
    assert lines[1] == "ACTUAL: Animal\tTP = 47\tFN = 8\t55"
    assert lines[2] == "ACTUAL: Litter\tFP = 3\tTN = 42\t45"
    assert lines[3] == "\t50\t50\t"


def test_format_metrics(reference_matrix):
    lines = format_metrics(metrics_from_matrix(reference_matrix))
    assert lines == ["accuracy\t0.89", "precision\t0.94", "recall\t0.85", "hazard_rate\t0.15"]


def test_format_csv(reference_matrix):
    header, row = format_csv(reference_matrix, metrics_from_matrix(reference_matrix))
    assert header == "tp,fn,fp,tn,accuracy,precision,recall,hazard_rate"
    assert row.startswith("47,8,3,42,0.890000,0.940000,")


def test_format_csv_undefined():
    cm = ConfusionMatrix(tn=2)
    _, row = format_csv(cm, metrics_from_matrix(cm))
    assert row == "0,0,0,2,1.000000,undefined,undefined,undefined"


def test_metrics_as_dict_order():
    metrics = ClassificationMetrics(0.5, None, 0.25, 0.75)
    assert list(metrics.as_dict()) == ["accuracy", "precision", "recall", "hazard_rate"]


def test_zero_model_predicts_animal_everywhere(synthetic_manifest):
    """Test sigmoid(0) = 0.5 is classified as Animal, so recall is 1."""
    config = TrainConfig(image_size=32)
    params = ModelParams.zeros(config)
    cm = evaluate(params, synthetic_manifest.split("test"), image_size=32, workers=2)
    assert cm == ConfusionMatrix(tp=2, fn=0, fp=2, tn=0)


def test_predict_probabilities_batches():
    config = TrainConfig(image_size=32)
    params = ModelParams.zeros(config)
    images = np.zeros((5, 3, 32, 32), dtype=np.float32)
    probs = predict_probabilities(params, images, batch_size=2)
    np.testing.assert_allclose(probs, 0.5)
    assert probs.shape == (5,)


def test_evaluate_empty(synthetic_manifest):
    params = ModelParams.zeros(TrainConfig(image_size=32))
    with pytest.raises(DatasetError):
        evaluate(params, [], image_size=32)
