"""Exception hierarchy shared across the package.

The CLI maps each family onto an exit code: usage problems exit 2,
data problems exit 3 and state problems exit 4.
"""

from __future__ import annotations


class StageLoraError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(StageLoraError, ValueError):
    """Operand shapes are incompatible."""


class ContractError(StageLoraError, ValueError):
    """A precondition on arguments was violated."""


class TapeStateError(StageLoraError, RuntimeError):
    """The autodiff tape was used out of order."""


class StateError(StageLoraError, RuntimeError):
    """A pipeline step was requested in the wrong state (e.g. stage 2 before stage 1)."""


class DataError(StageLoraError, ValueError):
    """Input data violates its declared schema or label set."""


class SpecError(ContractError):
    """A synthesis or prompt spec is internally inconsistent."""


class CompatibilityError(DataError):
    """A checkpoint and a manifest disagree on dimension or labels."""


class ManifestParseError(DataError):
    """A manifest line is not well-formed."""

    def __init__(self, message: str, line_number: int):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class ManifestValidationError(DataError):
    """A manifest record disagrees with the header's dimension or label set."""

    def __init__(self, message: str, record_id: str):
        super().__init__(f"record {record_id!r}: {message}")
        self.record_id = record_id


class CheckpointError(DataError):
    """Base class for checkpoint load failures."""


class CheckpointFormatError(CheckpointError):
    """Magic bytes do not identify a checkpoint file."""


class CheckpointVersionError(CheckpointError):
    """The file uses an unsupported format version."""


class CheckpointTruncatedError(CheckpointError):
    """The file ends before the declared content does."""


class CheckpointShapeError(CheckpointError):
    """Declared tensor shapes or sizes disagree with the payload or the network layout."""
