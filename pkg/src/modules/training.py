"""
Training loop, replicate averaging and the per-epoch history file.
"""

import csv
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from src.config import ANIMAL, ERROR_MESSAGES, HISTORY_COLUMNS, LITTER, TrainConfig
from src.modules.dataset import LoadedImages, SampleManifest, load_samples
from src.modules.evaluation import ConfusionMatrix, confusion_from_predictions
from src.modules.layers import sigmoid
from src.modules.model import ModelParams, model_backward_from_logits, model_forward, model_logits
from src.modules.optim import AdamState, EpochMetrics, adam_step, batch_loss_acc, bce_loss_from_logit, predict_labels
from src.modules.tensor import Rng
from src.utils.errors import ClassifierError, DatasetError, TensorError, TrainingError
from src.utils.logging import get_logger

logger = get_logger("training")

PathLike = Union[str, Path]
METRIC_NAMES = ("train_loss", "val_loss", "train_acc", "val_acc")


@dataclass
class RunHistory:
    """Everything recorded by one training run."""

    seed: int
    epochs: List[EpochMetrics] = field(default_factory=list)
    confusion: Optional[ConfusionMatrix] = None
    duration: float = 0.0

    @property
    def final(self) -> EpochMetrics:
        return self.epochs[-1]


def _split_logits(params: ModelParams, images: np.ndarray, batch_size: int) -> np.ndarray:
    return np.concatenate([
        model_logits(images[start:start + batch_size], params)
        for start in range(0, len(images), batch_size)
    ])


def split_metrics(params: ModelParams, images: np.ndarray, labels: np.ndarray,
                  batch_size: int) -> Tuple[float, float, np.ndarray]:
    """Loss, accuracy and probabilities of a whole split with frozen weights."""
    logits = _split_logits(params, images, batch_size)
    probabilities = sigmoid(logits)
    loss, accuracy = batch_loss_acc(probabilities, labels, logits=logits)
    return loss, accuracy, probabilities


def _check_train_split(labels: np.ndarray) -> None:
    if len(labels) == 0:
        raise DatasetError(ERROR_MESSAGES["empty_split"].format(split="train"))
    counts = {ANIMAL: int(np.sum(labels == ANIMAL)), LITTER: int(np.sum(labels == LITTER))}
    if counts[ANIMAL] != counts[LITTER]:
        raise DatasetError(ERROR_MESSAGES["unbalanced_train"].format(counts=counts))


def fit(config: TrainConfig, train: LoadedImages, val: LoadedImages,
        seed: Optional[int] = None) -> Tuple[ModelParams, RunHistory]:
    """
    Train one model on already decoded images.

    Per epoch: seeded re-shuffle, minibatch forward/backward/Adam over all
    batches (the last one may be short), then frozen full passes over train
    and validation for the metrics.
    """
    _check_train_split(train.labels)
    if len(val.labels) == 0:
        raise DatasetError(ERROR_MESSAGES["empty_split"].format(split="val"))

    seed = config.seed if seed is None else seed
    started = time.perf_counter()
    rng = Rng(seed)
    params = ModelParams.initialize(config, rng)
    state = AdamState.for_params(params, lr=config.lr)
    history = RunHistory(seed=seed)

    count = len(train.labels)
    for epoch in range(1, config.epochs + 1):
        order = np.array(rng.shuffle(range(count)), dtype=np.intp)
        for batch, start in enumerate(range(0, count, config.batch_size), start=1):
            index = order[start:start + config.batch_size]
            labels = train.labels[index]
            try:
                _, trace = model_forward(train.images[index], params, keep_trace=True)
                losses, logit_grad = bce_loss_from_logit(trace.logits, labels)
                loss = float(np.mean(losses))
                if not math.isfinite(loss):
                    raise TrainingError(ERROR_MESSAGES["non_finite_loss"], epoch=epoch, batch=batch)
                grads = model_backward_from_logits(trace, logit_grad / len(index))
                adam_step(params, grads, state)
            except TensorError as e:
                raise TrainingError(str(e), epoch=epoch, batch=batch) from e

        try:
            train_loss, train_acc, _ = split_metrics(params, train.images, train.labels, config.batch_size)
            val_loss, val_acc, val_probs = split_metrics(params, val.images, val.labels, config.batch_size)
        except TensorError as e:
            raise TrainingError(str(e), epoch=epoch) from e
        if not (math.isfinite(train_loss) and math.isfinite(val_loss)):
            raise TrainingError(ERROR_MESSAGES["non_finite_loss"], epoch=epoch)

        metrics = EpochMetrics(epoch, train_loss, train_acc, val_loss, val_acc)
        history.epochs.append(metrics)
        logger.info(
            f"seed {seed} epoch {epoch}/{config.epochs} "
            f"train_loss={train_loss:.4f} train_acc={train_acc:.4f} "
            f"val_loss={val_loss:.4f} val_acc={val_acc:.4f}"
        )

    history.confusion = confusion_from_predictions(val.labels, predict_labels(val_probs))
    history.duration = time.perf_counter() - started
    return params, history


def load_training_data(config: TrainConfig, manifest: SampleManifest) -> Tuple[LoadedImages, LoadedImages]:
    train_samples = manifest.split("train")
    val_samples = manifest.split("val")
    for name, samples in (("train", train_samples), ("val", val_samples)):
        if not samples:
            raise DatasetError(ERROR_MESSAGES["empty_split"].format(split=name))
    train = load_samples(train_samples, config.image_size, config.decode_workers, config.skip_unreadable)
    val = load_samples(val_samples, config.image_size, config.decode_workers, config.skip_unreadable)
    return train, val


def train(config: TrainConfig, manifest: SampleManifest) -> Tuple[ModelParams, RunHistory]:
    """Train one model on the manifest's train split, validating on its val split."""
    train_data, val_data = load_training_data(config, manifest)
    return fit(config, train_data, val_data)


@dataclass
class ReplicateResult:
    index: int
    seed: int
    params: ModelParams
    history: RunHistory


@dataclass
class ReplicateSummary:
    results: List[ReplicateResult]
    means: Dict[str, float]
    best_index: int

    @property
    def finals(self) -> List[EpochMetrics]:
        return [result.history.final for result in self.results]


def replicate_means(finals: Sequence[EpochMetrics]) -> Dict[str, float]:
    """Arithmetic mean of each final metric; math.fsum makes it independent of run order."""
    if not finals:
        raise ValueError("no replicate results to average")
    return {
        name: math.fsum(getattr(metrics, name) for metrics in finals) / len(finals)
        for name in METRIC_NAMES
    }


def best_replicate(finals: Sequence[EpochMetrics]) -> int:
    """Index of the highest final validation accuracy; ties go to the lowest index."""
    best = 0
    for index, metrics in enumerate(finals):
        if metrics.val_acc > finals[best].val_acc:
            best = index
    return best


def run_replicates(config: TrainConfig, manifest: SampleManifest,
                   n: Optional[int] = None) -> ReplicateSummary:
    """
    Train n independent models with seeds seed, seed + 1, ... and average
    their final metrics.

    Images are decoded once. With replicate_workers > 1 the runs share a
    thread pool; results stay ordered by replicate index.
    """
    n = config.replicates if n is None else n
    if n < 1:
        raise ValueError(f"need at least one replicate, got {n}")
    train_data, val_data = load_training_data(config, manifest)

    def run(index: int) -> ReplicateResult:
        seed = (config.seed + index) % 2 ** 64
        params, history = fit(config, train_data, val_data, seed=seed)
        return ReplicateResult(index=index, seed=seed, params=params, history=history)

    with ThreadPoolExecutor(max_workers=config.replicate_workers) as executor:
        results = list(executor.map(run, range(n)))

    finals = [result.history.final for result in results]
    return ReplicateSummary(results=results, means=replicate_means(finals), best_index=best_replicate(finals))


def format_replicate_table(finals: Sequence[EpochMetrics], means: Dict[str, float]) -> List[str]:
    """Per-run final metrics and their mean, at 2 decimals."""
    lines = ["run\t" + "\t".join(METRIC_NAMES)]
    for index, metrics in enumerate(finals):
        lines.append(f"{index}\t" + "\t".join(f"{getattr(metrics, name):.2f}" for name in METRIC_NAMES))
    lines.append("mean\t" + "\t".join(f"{means[name]:.2f}" for name in METRIC_NAMES))
    return lines


def write_history_csv(history: Union[RunHistory, Sequence[EpochMetrics]], path: PathLike) -> None:
    """One row per epoch, 6 decimals, LF line endings."""
    epochs = history.epochs if isinstance(history, RunHistory) else list(history)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(tmp, "w", encoding="utf-8", newline="") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(HISTORY_COLUMNS)
            for metrics in epochs:
                writer.writerow([
                    metrics.epoch,
                    f"{metrics.train_loss:.6f}",
                    f"{metrics.train_acc:.6f}",
                    f"{metrics.val_loss:.6f}",
                    f"{metrics.val_acc:.6f}",
                ])
        os.replace(tmp, path)
    except OSError as e:
        raise ClassifierError(f"cannot write history {path}: {e}") from e
    finally:
        if tmp.exists():
            tmp.unlink()


def read_history_csv(path: PathLike) -> List[EpochMetrics]:
    with open(path, encoding="utf-8", newline="") as handle:
        reader = csv.DictReader(handle)
        return [
            EpochMetrics(
                epoch=int(row["epoch"]),
                train_loss=float(row["train_loss"]),
                train_acc=float(row["train_acc"]),
                val_loss=float(row["val_loss"]),
                val_acc=float(row["val_acc"]),
            )
            for row in reader
        ]
