"""
Confusion-matrix evaluation.

The positive class is Animal. Rows are the actual class, columns the
prediction:

                     predicted Animal   predicted Litter
    actual Animal          tp                 fn
    actual Litter          fp                 tn
"""

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from src.config import ANIMAL, BATCH_SIZE, CLASS_NAMES, DECODE_WORKERS, IMAGE_SIZE, LITTER
from src.modules.dataset import Sample, load_samples
from src.modules.model import ModelParams, model_forward
from src.modules.optim import predict_labels
from src.utils.errors import DatasetError, TensorError
from src.utils.logging import get_logger

logger = get_logger("evaluation")


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int = 0
    fn: int = 0
    fp: int = 0
    tn: int = 0

    def __post_init__(self):
        for name in ("tp", "fn", "fp", "tn"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    @property
    def total(self) -> int:
        return self.tp + self.fn + self.fp + self.tn

    def row_sums(self) -> Dict[int, int]:
        """Actual class counts."""
        return {ANIMAL: self.tp + self.fn, LITTER: self.fp + self.tn}

    def column_sums(self) -> Dict[int, int]:
        """Predicted class counts."""
        return {ANIMAL: self.tp + self.fp, LITTER: self.fn + self.tn}


@dataclass(frozen=True)
class ClassificationMetrics:
    """Scores derived from a confusion matrix; None marks an undefined ratio."""

    accuracy: Optional[float]
    precision: Optional[float]
    recall: Optional[float]
    hazard_rate: Optional[float]

    def as_dict(self) -> Dict[str, Optional[float]]:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "hazard_rate": self.hazard_rate,
        }


def _ratio(numerator: int, denominator: int) -> Optional[float]:
    return numerator / denominator if denominator > 0 else None


def metrics_from_matrix(cm: ConfusionMatrix) -> ClassificationMetrics:
    """
    Accuracy, precision and recall for the Animal class, and the hazard rate:
    the share of real animals classified as litter.
    """
    if cm.total <= 0:
        raise ValueError("confusion matrix is empty")
    return ClassificationMetrics(
        accuracy=_ratio(cm.tp + cm.tn, cm.total),
        precision=_ratio(cm.tp, cm.tp + cm.fp),
        recall=_ratio(cm.tp, cm.tp + cm.fn),
        hazard_rate=_ratio(cm.fn, cm.tp + cm.fn),
    )


def confusion_from_predictions(actual: Sequence[int], predicted: Sequence[int]) -> ConfusionMatrix:
    """Tally (actual, predicted) label pairs in sample order."""
    if len(actual) != len(predicted):
        raise TensorError(f"{len(actual)} labels for {len(predicted)} predictions")
    counts = {"tp": 0, "fn": 0, "fp": 0, "tn": 0}
    for truth, guess in zip(actual, predicted):
        truth, guess = int(truth), int(guess)
        if truth not in (ANIMAL, LITTER) or guess not in (ANIMAL, LITTER):
            raise TensorError("labels and predictions must be 0 or 1")
        if truth == ANIMAL:
            counts["tp" if guess == ANIMAL else "fn"] += 1
        else:
            counts["fp" if guess == ANIMAL else "tn"] += 1
    return ConfusionMatrix(**counts)


def predict_probabilities(params: ModelParams, images: np.ndarray, batch_size: int = BATCH_SIZE) -> np.ndarray:
    """Sigmoid outputs for a stack of standardized images, batch by batch."""
    chunks = [
        model_forward(images[start:start + batch_size], params)[0]
        for start in range(0, len(images), batch_size)
    ]
    return np.concatenate(chunks) if chunks else np.zeros(0, dtype=np.float64)


def evaluate(params: ModelParams, samples: Sequence[Sample], image_size: int = IMAGE_SIZE,
             batch_size: int = BATCH_SIZE, workers: int = DECODE_WORKERS,
             skip_unreadable: bool = False) -> ConfusionMatrix:
    """
    Classify samples and tally the confusion matrix.

    Unreadable images abort the evaluation unless skip_unreadable is set,
    in which case they are reported and left out of the counts.
    """
    if not samples:
        raise DatasetError("cannot evaluate an empty sample set")
    loaded = load_samples(samples, image_size, workers, skip_unreadable=skip_unreadable)
    if not loaded.samples:
        raise DatasetError("no readable samples to evaluate")

    probabilities = predict_probabilities(params, loaded.images, batch_size)
    cm = confusion_from_predictions(loaded.labels, predict_labels(probabilities))
    logger.info(f"Evaluated {cm.total} samples, {len(loaded.failures)} skipped")
    return cm


def _format_optional(value: Optional[float], digits: int = 2) -> str:
    return "undefined" if value is None else f"{value:.{digits}f}"


def format_matrix(cm: ConfusionMatrix) -> List[str]:
    """The matrix with its row and column margins."""
    animal, litter = CLASS_NAMES[ANIMAL], CLASS_NAMES[LITTER]
    rows, columns = cm.row_sums(), cm.column_sums()
    return [
        f"n = {cm.total}\tPREDICTED: {animal}\tPREDICTED: {litter}\t",
        f"ACTUAL: {animal}\tTP = {cm.tp}\tFN = {cm.fn}\t{rows[ANIMAL]}",
        f"ACTUAL: {litter}\tFP = {cm.fp}\tTN = {cm.tn}\t{rows[LITTER]}",
        f"\t{columns[ANIMAL]}\t{columns[LITTER]}\t",
    ]


def format_metrics(metrics: ClassificationMetrics) -> List[str]:
    return [f"{name}\t{_format_optional(value)}" for name, value in metrics.as_dict().items()]


def format_csv(cm: ConfusionMatrix, metrics: ClassificationMetrics) -> List[str]:
    """One header and one data row, metrics at 6 decimals."""
    values = metrics.as_dict()
    header = ["tp", "fn", "fp", "tn", *values.keys()]
    row = [str(cm.tp), str(cm.fn), str(cm.fp), str(cm.tn)]
    row += [_format_optional(value, 6) for value in values.values()]
    return [",".join(header), ",".join(row)]
