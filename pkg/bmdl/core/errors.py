"""
Exception hierarchy for the BMDL toolkit.

Every error raised on purpose by the package derives from ``BMDLError`` so the
CLI can map failures to exit codes without string matching.
"""

from typing import Optional


class BMDLError(Exception):
    """Base class for all package errors."""


class ParameterDomainError(BMDLError, ValueError):
    """A distribution parameter is outside its domain (or not finite)."""


class PreconditionError(BMDLError, ValueError):
    """An operation was called on inputs that violate its precondition."""


class DataError(BMDLError):
    """Input data could not be used."""


class CountMatrixParseError(DataError):
    """A count matrix file is malformed."""

    def __init__(self, message: str, path: Optional[str] = None,
                 line: Optional[int] = None, column: Optional[str] = None):
        self.path = path
        self.line = line
        self.column = column
        location = []
        if path:
            location.append(str(path))
        if line is not None:
            location.append(f"line {line}")
        if column is not None:
            location.append(f"column {column!r}")
        prefix = f"{', '.join(location)}: " if location else ""
        super().__init__(f"{prefix}{message}")


class ManifestError(DataError):
    """A domain manifest is invalid."""


class GeneAxisMismatchError(DataError):
    """Two count matrices do not share the same gene axis."""


class EmptyIntersectionError(DataError):
    """No gene is present in every domain."""


class NumericError(BMDLError, ArithmeticError):
    """The sampler produced non-finite values."""


class CheckpointError(BMDLError):
    """A checkpoint file cannot be loaded."""


class ClassifierError(BMDLError, ValueError):
    """The classifier cannot be trained on the given data."""


class ConfigError(BMDLError, ValueError):
    """A config file or override cannot be applied."""
