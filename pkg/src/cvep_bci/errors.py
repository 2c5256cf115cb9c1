"""Exception hierarchy for cvep-bci."""

from __future__ import annotations


class CvepError(Exception):
    """Base class for every error raised by cvep-bci."""


class ArgumentError(CvepError, ValueError):
    """An argument is outside the accepted domain of an operation."""


class InvariantViolation(CvepError, ValueError):
    """A container or configuration would break one of its invariants."""


class FormatError(CvepError, ValueError):
    """A file does not carry the expected header or structure."""


class CorruptPayload(CvepError, ValueError):
    """A file header disagrees with the payload that follows it."""


class CapacityError(CvepError):
    """A requested allocation exceeds the supported size."""


class DegenerateScatter(CvepError):
    """Scatter matrices cannot be formed (fewer than two classes or trials)."""


class SingularWithin(CvepError):
    """The within-class scatter is singular and no ridge was requested."""


class ZeroDesign(CvepError):
    """The lagged stimulus design carries no energy."""


class MissingDataError(CvepError):
    """A required class response is absent from a source subject."""


class DegenerateCorrelation(CvepError):
    """A trial or template has zero variance, so correlation is undefined."""


class InsufficientClasses(CvepError):
    """Too few classes to estimate a score distribution."""


class NoNoiseEstimate(CvepError):
    """A single trial gives no residual to estimate noise from."""


class MissingInput(CvepError, FileNotFoundError):
    """A pipeline stage input does not exist."""

    def __init__(self, stage: str, path: str) -> None:
        super().__init__(f"stage '{stage}' is missing input {path}")
        self.stage = stage
        self.path = path


class WorkspaceConflict(CvepError):
    """A stage would overwrite an artifact produced from different inputs."""
