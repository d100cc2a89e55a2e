"""
Command-line entry point: prepare, train, eval and predict.

Data rows go to standard output, human summaries to standard error.
Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

import argparse
import sys
from pathlib import Path
from typing import Callable, List, Optional, Sequence

from pydantic import ValidationError

from src.config import (
    ANIMAL,
    AUGMENT_CROPS,
    AUGMENT_ROTATIONS,
    BATCH_SIZE,
    CLASS_NAMES,
    CROP_MIN_FRACTION,
    DECODE_WORKERS,
    EPOCHS,
    ERROR_MESSAGES,
    FILTERS,
    IMAGE_SIZE,
    LEARNING_RATE,
    LITTER,
    LOG_FILE,
    LOG_LEVEL,
    MANIFEST_SPLITS,
    VAL_FRACTION,
    PrepareConfig,
    TrainConfig,
)
from src.modules.dataset import prepare, read_manifest, write_manifest
from src.modules.evaluation import (
    evaluate,
    format_csv,
    format_matrix,
    format_metrics,
    metrics_from_matrix,
)
from src.modules.images import load_image
from src.modules.model import model_forward
from src.modules.optim import predict_labels
from src.modules.serialization import load_model, save_model
from src.modules.training import format_replicate_table, run_replicates, write_history_csv
from src.utils.errors import ClassifierError, DatasetError
from src.utils.logging import get_logger, setup_logging
from src.utils.metrics import MetricsCollector, OperationMetrics
from src.utils.validators import (
    non_negative_int,
    open_fraction,
    positive_float,
    positive_fraction,
    positive_int,
    rotation_count,
    seed_u64,
    unit_interval,
)

logger = get_logger("cli")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


def _emit(lines: Sequence[str]) -> None:
    for line in lines:
        print(line)
    sys.stdout.flush()


def replicate_path(path: Path, index: int) -> Path:
    """model.bin → model.bin.r0"""
    return path.with_name(f"{path.name}.r{index}")


def cmd_prepare(args: argparse.Namespace, metrics: Optional[OperationMetrics]) -> int:
    config = PrepareConfig(
        seed=args.seed,
        val_fraction=args.val_fraction,
        augment_rotations=args.augment_rotations,
        augment_crops=args.augment_crops,
        crop_min_fraction=args.crop_min_fraction,
        decode_workers=args.workers,
    )
    manifest = prepare(args.data, config)
    write_manifest(manifest, args.out)

    counts = manifest.counts()
    lines = [f"split\t{CLASS_NAMES[ANIMAL]}\t{CLASS_NAMES[LITTER]}"]
    lines += [f"{split}\t{counts[split][ANIMAL]}\t{counts[split][LITTER]}" for split in MANIFEST_SPLITS]
    _emit(lines)
    logger.info(f"Manifest written to {args.out} ({len(manifest.records)} records)")

    if metrics:
        metrics.output_size = len(manifest.records)
    return EXIT_OK


def cmd_train(args: argparse.Namespace, metrics: Optional[OperationMetrics]) -> int:
    config = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        lr=args.lr,
        seed=args.seed,
        replicates=args.replicates,
        replicate_workers=args.replicate_workers,
        image_size=args.image_size,
        filters=args.filters,
        decode_workers=args.workers,
        skip_unreadable=args.skip_unreadable,
    )
    config.architecture()
    manifest = read_manifest(args.manifest)
    summary = run_replicates(config, manifest, config.replicates)

    out = Path(args.out)
    history_path = Path(args.history) if args.history else None
    if config.replicates == 1:
        result = summary.results[0]
        save_model(result.params, out)
        if history_path:
            write_history_csv(result.history, history_path)
    else:
        for result in summary.results:
            save_model(result.params, replicate_path(out, result.index))
            if history_path:
                write_history_csv(result.history, replicate_path(history_path, result.index))
        save_model(summary.results[summary.best_index].params, out)
        logger.info(f"Replicate {summary.best_index} has the best final val_acc, written to {out}")

    lines = format_replicate_table(summary.finals, summary.means)
    if config.replicates == 1:
        lines = lines[:-1]
    else:
        lines.append(f"best\t{summary.best_index}")
    _emit(lines)

    if metrics:
        metrics.input_size = len(manifest.records)
        for name, value in summary.means.items():
            metrics.add_metric(name, value)
    return EXIT_OK


def _check_model(params, image_size: int, filters: int) -> None:
    params.check_architecture(TrainConfig(image_size=image_size, filters=filters))


def cmd_eval(args: argparse.Namespace, metrics: Optional[OperationMetrics]) -> int:
    params = load_model(args.model)
    _check_model(params, args.image_size, args.filters)
    samples = read_manifest(args.manifest).split(args.split)
    if not samples:
        raise DatasetError(ERROR_MESSAGES["empty_split"].format(split=args.split))

    cm = evaluate(
        params, samples,
        image_size=args.image_size,
        batch_size=args.batch_size,
        workers=args.workers,
        skip_unreadable=args.skip_unreadable,
    )
    scores = metrics_from_matrix(cm)

    if args.format == "csv":
        _emit(format_csv(cm, scores))
    else:
        predicted = cm.column_sums()
        _emit(format_matrix(cm) + format_metrics(scores) + [
            f"predicted\t{CLASS_NAMES[ANIMAL]}={predicted[ANIMAL]}\t{CLASS_NAMES[LITTER]}={predicted[LITTER]}"
        ])

    if metrics:
        metrics.input_size = cm.total
        for name, value in scores.as_dict().items():
            if value is not None:
                metrics.add_metric(name, value)

    if args.min_accuracy is not None and scores.accuracy < args.min_accuracy:
        logger.error(ERROR_MESSAGES["below_target"].format(accuracy=scores.accuracy, target=args.min_accuracy))
        return EXIT_FAILURE
    return EXIT_OK


def cmd_predict(args: argparse.Namespace, metrics: Optional[OperationMetrics]) -> int:
    params = load_model(args.model)
    _check_model(params, args.image_size, args.filters)

    failed = 0
    for path in args.images:
        try:
            image = load_image(path, args.image_size)
        except ClassifierError as e:
            logger.error(f"Cannot classify {e}")
            failed += 1
            continue
        probabilities, _ = model_forward(image[None], params)
        label = int(predict_labels(probabilities)[0])
        _emit([f"{path}\t{float(probabilities[0]):.6f}\t{CLASS_NAMES[label]}"])

    if metrics:
        metrics.input_size = len(args.images)
        metrics.output_size = len(args.images) - failed
    if failed:
        logger.error(f"{failed} of {len(args.images)} image(s) could not be classified")
        return EXIT_FAILURE
    return EXIT_OK


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--workers", type=positive_int, default=DECODE_WORKERS,
                        help="image decoding threads (default: %(default)s)")
    parser.add_argument("--metrics-dir", type=Path, default=None,
                        help="write one operation metrics JSON file here")


def _add_architecture(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--image-size", type=positive_int, default=IMAGE_SIZE,
                        help="square input side in pixels (default: %(default)s)")
    parser.add_argument("--filters", type=positive_int, default=FILTERS,
                        help="filters per conv layer (default: %(default)s)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="debris-classifier",
        description="Classify underwater images as Animal or Litter.",
        allow_abbrev=False,
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    p = subparsers.add_parser("prepare", allow_abbrev=False,
                              help="ingest, augment, balance and split a corpus into a manifest")
    p.add_argument("--data", type=Path, required=True, help="corpus root with animals/ and litter/")
    p.add_argument("--out", type=Path, required=True, help="manifest file to write")
    p.add_argument("--seed", type=seed_u64, required=True)
    p.add_argument("--augment-rotations", type=rotation_count, default=AUGMENT_ROTATIONS,
                   help="quarter-turn rotations per image, 0..3 (default: %(default)s)")
    p.add_argument("--augment-crops", type=non_negative_int, default=AUGMENT_CROPS,
                   help="random crops per image (default: %(default)s)")
    p.add_argument("--crop-min-fraction", type=positive_fraction, default=CROP_MIN_FRACTION,
                   help="smallest crop side as a fraction of the image side (default: %(default)s)")
    p.add_argument("--val-fraction", type=open_fraction, default=VAL_FRACTION,
                   help="share of each class held out for validation (default: %(default)s)")
    _add_common(p)
    p.set_defaults(handler=cmd_prepare)

    p = subparsers.add_parser("train", allow_abbrev=False, help="train one or more models")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="model file to write")
    p.add_argument("--epochs", type=positive_int, default=EPOCHS, help="(default: %(default)s)")
    p.add_argument("--batch-size", type=positive_int, default=BATCH_SIZE, help="(default: %(default)s)")
    p.add_argument("--lr", type=positive_float, default=LEARNING_RATE, help="(default: %(default)s)")
    p.add_argument("--seed", type=seed_u64, default=0, help="(default: %(default)s)")
    p.add_argument("--replicates", type=positive_int, default=1,
                   help="independent runs with seeds seed, seed+1, ... (default: %(default)s)")
    p.add_argument("--replicate-workers", type=positive_int, default=1,
                   help="replicates trained concurrently (default: %(default)s)")
    p.add_argument("--history", type=Path, default=None, help="per-epoch metrics CSV to write")
    p.add_argument("--skip-unreadable", action="store_true", help="leave unreadable images out")
    _add_architecture(p)
    _add_common(p)
    p.set_defaults(handler=cmd_train)

    p = subparsers.add_parser("eval", allow_abbrev=False, help="confusion matrix on a manifest split")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--split", choices=MANIFEST_SPLITS, default="test", help="(default: %(default)s)")
    p.add_argument("--format", choices=("text", "csv"), default="text", help="(default: %(default)s)")
    p.add_argument("--min-accuracy", type=unit_interval, default=None,
                   help="exit 1 when accuracy is below this value")
    p.add_argument("--batch-size", type=positive_int, default=BATCH_SIZE, help="(default: %(default)s)")
    p.add_argument("--skip-unreadable", action="store_true", help="leave unreadable images out")
    _add_architecture(p)
    _add_common(p)
    p.set_defaults(handler=cmd_eval)

    p = subparsers.add_parser("predict", allow_abbrev=False, help="classify image files")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("images", nargs="+", help="PNG or JPEG files")
    _add_architecture(p)
    _add_common(p)
    p.set_defaults(handler=cmd_predict)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_USAGE

    setup_logging(LOG_LEVEL, LOG_FILE)
    collector = MetricsCollector(args.metrics_dir) if args.metrics_dir else None
    options = {name: value for name, value in vars(args).items() if name not in ("handler", "command")}
    metrics = collector.start_operation(args.command, options) if collector else None
    handler: Callable[[argparse.Namespace, Optional[OperationMetrics]], int] = args.handler

    try:
        code = handler(args, metrics)
    except (ClassifierError, ValidationError, ValueError, OSError) as e:
        logger.error(f"{args.command} failed: {e}")
        if metrics:
            metrics.complete(success=False, error=str(e))
            collector.save_metrics(metrics)
        return EXIT_FAILURE

    if metrics:
        metrics.complete(success=code == EXIT_OK)
        collector.save_metrics(metrics)
    return code
