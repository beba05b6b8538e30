"""
Error hierarchy and failure bookkeeping.

Every failure raised by the package is a ``CpNetError`` carrying an
``ErrorCategory``. The CLI turns categories into exit codes and keeps an
``ErrorReport`` of what went wrong during a run.
"""

from collections import defaultdict
from dataclasses import dataclass, field
from datetime import datetime
from typing import Any, Dict, List, Optional

from loguru import logger


class ErrorCategory:
    """Error category classifications."""
    USAGE = "usage"
    IO = "io"
    NUMERICAL = "numerical"
    INTERNAL = "internal"


EXIT_CODES = {
    ErrorCategory.USAGE: 2,
    ErrorCategory.IO: 3,
    ErrorCategory.NUMERICAL: 4,
    ErrorCategory.INTERNAL: 1,
}


class CpNetError(Exception):
    """Base class for all package errors."""
    category = ErrorCategory.INTERNAL

    @property
    def exit_code(self) -> int:
        return EXIT_CODES[self.category]


class UsageError(CpNetError):
    category = ErrorCategory.USAGE


class CloudIOError(CpNetError):
    category = ErrorCategory.IO


class NumericalError(CpNetError):
    category = ErrorCategory.NUMERICAL


# cloud_io

class ParseError(CloudIOError):
    """Malformed record in a point cloud file."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class EmptyCloudError(UsageError):
    pass


class InvalidSpecError(UsageError):
    pass


class TooFewPointsError(UsageError):
    pass


# geometry / disentangle

class BadKError(UsageError):
    pass


class BadMError(UsageError):
    pass


class BadCountError(UsageError):
    pass


class EmptySourceError(UsageError):
    pass


class EmptyResultError(UsageError):
    pass


# autodiff / model

class ShapeMismatchError(UsageError):
    pass


class SizeMismatchError(ShapeMismatchError):
    pass


class VariantMismatchError(UsageError):
    pass


class MisalignedError(UsageError):
    pass


class NonScalarLossError(UsageError):
    pass


class NonFiniteError(NumericalError):
    pass


class ZeroVectorError(NumericalError):
    pass


# training / config

class ConfigError(UsageError):
    pass


class DegenerateLabelsError(UsageError):
    pass


class VersionMismatchError(CloudIOError):
    pass


class NonFiniteLossError(NumericalError):
    """Training produced a non-finite loss; the offending step is recorded."""

    def __init__(self, epoch: int, step: int, terms: Optional[Dict[str, float]] = None):
        super().__init__(f"non-finite loss at epoch {epoch}, step {step}: {terms or {}}")
        self.epoch = epoch
        self.step = step
        self.terms = terms or {}


class GradientCheckError(NumericalError):
    """Tape gradients disagree with finite differences."""

    def __init__(self, max_rel_error: float, tol: float):
        super().__init__(f"gradient check failed: max relative error {max_rel_error:.3e} >= {tol:g}")
        self.max_rel_error = max_rel_error
        self.tol = tol


def categorize(error: BaseException) -> str:
    """Map any exception to an error category."""
    if isinstance(error, CpNetError):
        return error.category
    if isinstance(error, OSError):
        return ErrorCategory.IO
    if isinstance(error, (ValueError, TypeError, KeyError)):
        return ErrorCategory.USAGE
    if isinstance(error, (FloatingPointError, OverflowError, ZeroDivisionError)):
        return ErrorCategory.NUMERICAL
    return ErrorCategory.INTERNAL


def exit_code_for(error: BaseException) -> int:
    return EXIT_CODES[categorize(error)]


@dataclass
class ErrorRecord:
    """Represents a single error occurrence."""
    command: str
    message: str
    category: str
    timestamp: datetime = field(default_factory=datetime.now)
    context: Dict[str, Any] = field(default_factory=dict)


class ErrorReport:
    """Collects the failures of a CLI session, grouped by category."""

    def __init__(self):
        self.records: List[ErrorRecord] = []

    def record(self, command: str, error: BaseException, **context) -> ErrorRecord:
        record = ErrorRecord(
            command=command,
            message=str(error),
            category=categorize(error),
            context=context,
        )
        self.records.append(record)
        logger.error(f"{command} failed [{record.category}]: {record.message}")
        return record

    def statistics(self) -> Dict[str, Any]:
        counts = defaultdict(int)
        for record in self.records:
            counts[record.category] += 1
        return {
            'total_errors': len(self.records),
            'errors_by_category': dict(counts),
            'most_common_category': max(counts.items(), key=lambda x: x[1])[0] if counts else None,
        }
