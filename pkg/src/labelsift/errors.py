"""Exception taxonomy shared across the toolkit.

Every error carries a short machine-parsable ``category`` that the CLI
prints as a single diagnostic line.
"""


class LabelSiftError(Exception):
    """Base class for all toolkit errors."""

    category = "error"


class ParseError(LabelSiftError):
    """A file could not be parsed (bad header, malformed row)."""

    category = "parse"


class IntegrityError(LabelSiftError):
    """Data violates a cross-record invariant (duplicate ids, split overlap)."""

    category = "integrity"


class ConfigError(LabelSiftError):
    """A configuration value is out of its allowed range."""

    category = "config"


class DomainError(LabelSiftError):
    """An argument is outside the operation's domain."""

    category = "domain"


class DegenerateInputError(LabelSiftError):
    """Input admits no meaningful result (e.g. zero-variance data)."""

    category = "degenerate-input"


class CoverageError(LabelSiftError):
    """Required coverage is incomplete (missing verdicts, pending reviews)."""

    category = "coverage"

    def __init__(self, message: str, pending: list[str] | None = None):
        super().__init__(message)
        self.pending = list(pending or [])


class TrainingError(LabelSiftError):
    """Training preconditions are not met."""

    category = "training"


class StageError(LabelSiftError):
    """A pipeline stage failed; wraps the underlying error."""

    category = "stage"

    def __init__(self, stage: int, message: str):
        super().__init__(f"stage {stage}: {message}")
        self.stage = stage
