"""Exception types shared across the toolkit.

Every error carries a short machine-parsable ``category`` so the CLI can
emit one-line diagnostics of the form ``error:<category>: <message>``.
"""
from __future__ import annotations


class EmbcacheError(Exception):
    """Base class for structured toolkit errors."""

    category = "error"


class InvalidConfigError(EmbcacheError):
    """A configuration object or flag combination is unusable."""

    category = "invalid-config"


class TraceParseError(EmbcacheError):
    """A trace or dataset file is syntactically malformed."""

    category = "parse-error"

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class TraceValidationError(EmbcacheError):
    """A parsed value is out of range for the declared vocabulary."""

    category = "validation-error"

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class CheckpointError(EmbcacheError):
    """A model checkpoint file is missing pieces or unreadable."""

    category = "corrupt-checkpoint"


class VocabularyMismatchError(EmbcacheError):
    """Model vocabulary does not match the trace it is asked to serve."""

    category = "vocabulary-mismatch"


class OutOfVocabularyError(EmbcacheError):
    """An embedding index lies outside the model's vocabulary."""

    category = "out-of-vocabulary"


class MissingArtifactError(EmbcacheError):
    """A required input file (trace, dataset, checkpoint) does not exist."""

    category = "missing-artifact"


class DegenerateFitError(EmbcacheError):
    """The latency fit has no usable spread in the regressor."""

    category = "degenerate-fit"


class NumericalError(EmbcacheError):
    """A non-finite value appeared where finite math was required."""

    category = "non-finite"
