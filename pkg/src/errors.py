"""Exception types shared by the analytics modules."""

from dataclasses import dataclass
from pathlib import Path
from typing import Optional


class CoachError(Exception):
    """Base class for every error raised by the toolkit."""


class SpecificationError(CoachError, ValueError):
    """A parameter object or input shape is invalid."""


class ComputationError(CoachError, ArithmeticError):
    """A numeric input cannot be evaluated (NaN, inf)."""


class EstimationError(CoachError):
    """Homography estimation failed."""


class ProjectionError(CoachError):
    """A point maps onto the line at infinity."""


class FeatureError(CoachError):
    """A skeleton cannot be turned into a feature vector."""


class ClusteringError(CoachError):
    """Clustering parameters do not fit the data."""


class StreamError(CoachError):
    """An IMU stream is malformed."""


class TrainingError(CoachError):
    """Stroke model training data is incomplete."""


class ClassificationError(CoachError):
    """A feature vector cannot be classified."""


@dataclass(frozen=True)
class SchemaViolation:
    """One problem found while validating a dataset directory."""
    file: str
    line: Optional[int]
    column: Optional[str]
    message: str

    def __str__(self) -> str:
        where = self.file
        if self.line is not None:
            where += f":{self.line}"
        if self.column:
            where += f" [{self.column}]"
        return f"{where}: {self.message}"


class DatasetValidationError(CoachError):
    """Raised when a dataset fails validation. Carries every violation found."""

    def __init__(self, violations: list[SchemaViolation]):
        self.violations = list(violations)
        head = "; ".join(str(v) for v in self.violations[:3])
        more = len(self.violations) - 3
        if more > 0:
            head += f" (+{more} more)"
        super().__init__(f"{len(self.violations)} schema violation(s): {head}")


class ExportError(CoachError, OSError):
    """Writing an output file failed."""

    def __init__(self, path: Path, reason: str):
        self.path = Path(path)
        super().__init__(f"Failed to write {self.path}: {reason}")
