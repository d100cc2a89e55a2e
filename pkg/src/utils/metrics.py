"""
Per-command metrics, written as JSON when the CLI is given --metrics-dir.
"""

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, Mapping, Optional

from src.utils.logging import get_logger

logger = get_logger("metrics")


def _json_value(value: Any) -> Any:
    if value is None or isinstance(value, (bool, int, float, str)):
        return value
    if isinstance(value, (list, tuple)):
        return [_json_value(item) for item in value]
    return str(value)


@dataclass
class OperationMetrics:
    """One CLI command: its options, timing, outcome and headline numbers."""

    operation: str
    options: Dict[str, Any] = field(default_factory=dict)
    start_time: float = field(default_factory=time.time)
    end_time: Optional[float] = None
    duration: Optional[float] = None
    success: bool = True
    error: Optional[str] = None
    input_size: Optional[int] = None
    output_size: Optional[int] = None
    custom_metrics: Dict[str, float] = field(default_factory=dict)

    def complete(self, success: bool = True, error: Optional[str] = None) -> None:
        """
        Stop the clock and record the outcome.

        Args:
            success (bool): Whether the command succeeded
            error (Optional[str]): Error message on failure
        """
        self.end_time = time.time()
        self.duration = self.end_time - self.start_time
        self.success = success
        self.error = error

    def add_metric(self, name: str, value: float) -> None:
        self.custom_metrics[name] = float(value)

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        del data["start_time"], data["end_time"]
        return data

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


class MetricsCollector:
    """Writes one JSON file per finished command into metrics_dir."""

    def __init__(self, metrics_dir: Path):
        self.metrics_dir = Path(metrics_dir)
        self.metrics_dir.mkdir(parents=True, exist_ok=True)
        self._counter = 0

    def start_operation(self, operation: str, options: Optional[Mapping[str, Any]] = None) -> OperationMetrics:
        """
        Start timing a command.

        Args:
            operation (str): Command name (prepare, train, eval, predict)
            options (Optional[Mapping[str, Any]]): Parsed command-line options

        Returns:
            OperationMetrics: Metrics to fill in while the command runs
        """
        recorded = {name: _json_value(value) for name, value in (options or {}).items()}
        return OperationMetrics(operation=operation, options=recorded)

    def save_metrics(self, metrics: OperationMetrics) -> Optional[Path]:
        """
        Write metrics to <operation>_<timestamp>_<n>.json.

        Returns:
            Optional[Path]: The file written, None if writing failed
        """
        if metrics.end_time is None:
            metrics.complete()

        self._counter += 1
        stamp = time.strftime("%Y%m%d_%H%M%S")
        path = self.metrics_dir / f"{metrics.operation}_{stamp}_{self._counter:03d}.json"
        try:
            path.write_text(metrics.to_json(), encoding="utf-8")
        except OSError as e:
            logger.error(f"Could not save metrics to {path}: {e}")
            return None
        logger.debug(f"Metrics saved: {path}")
        return path

    def get_metrics_summary(self, operation: Optional[str] = None) -> Dict[str, float]:
        """
        Count, success rate and mean duration of the saved files,
        optionally for one command only.
        """
        pattern = f"{operation}_*.json" if operation else "*.json"
        durations = []
        successes = 0
        for path in sorted(self.metrics_dir.glob(pattern)):
            try:
                data = json.loads(path.read_text(encoding="utf-8"))
            except (OSError, ValueError) as e:
                logger.error(f"Could not read metrics {path}: {e}")
                continue
            durations.append(data.get("duration") or 0.0)
            successes += bool(data.get("success"))

        total = len(durations)
        return {
            "total_operations": total,
            "success_rate": successes / total if total else 0,
            "average_duration": sum(durations) / total if total else 0,
        }
