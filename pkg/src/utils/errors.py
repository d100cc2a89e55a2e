"""
Exception hierarchy for the debris classifier.
Library code raises these; only the CLI turns them into exit codes.
"""

from typing import Optional


class ClassifierError(Exception):
    """Base class for every error raised by the classifier."""
    pass


class TensorError(ClassifierError, ValueError):
    """Invalid tensor construction or operation."""
    pass


class ShapeMismatchError(TensorError):
    """Operands or traces with incompatible shapes."""
    pass


class NonFiniteError(TensorError):
    """A NaN or infinity would be stored."""
    pass


class ImageLoadError(ClassifierError):
    """An image could not be read, decoded or standardized."""

    def __init__(self, path, reason: str):
        self.path = path
        self.reason = reason
        super().__init__(f"{path}: {reason}")


class DatasetError(ClassifierError, ValueError):
    """Dataset layout, balancing or splitting cannot proceed."""
    pass


class ManifestError(ClassifierError):
    """Malformed manifest file."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ModelFileError(ClassifierError):
    """Malformed or truncated model file."""
    pass


class ArchitectureMismatchError(ClassifierError):
    """A parameter tensor does not fit the configured architecture."""

    def __init__(self, name: str, expected, actual):
        self.name = name
        self.expected = tuple(expected) if expected is not None else None
        self.actual = tuple(actual) if actual is not None else None
        super().__init__(
            f"tensor '{name}': expected shape {self.expected}, got {self.actual}"
        )


class TrainingError(ClassifierError):
    """Training aborted."""

    def __init__(self, message: str, epoch: Optional[int] = None, batch: Optional[int] = None):
        self.epoch = epoch
        self.batch = batch
        where = []
        if epoch is not None:
            where.append(f"epoch {epoch}")
        if batch is not None:
            where.append(f"batch {batch}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
