"""Exception taxonomy shared across the package.

The CLI maps each class to a distinct exit code, so errors raised deep in
the pipeline surface with a stable, scriptable meaning.
"""


class GaitcastError(Exception):
    """Base class for all package errors."""


class ConfigError(GaitcastError):
    """Invalid configuration, arguments, or incompatible artifact lineage."""


class DataError(GaitcastError):
    """Malformed corpus data, schema violations, or leak-check failures."""


class TrialParseError(DataError):
    """CSV parse failure with optional row/column coordinates.

    Rows are 1-based over data rows (the header row is not counted).
    """

    def __init__(self, message, row=None, column=None):
        self.row = row
        self.column = column
        parts = [message]
        if column is not None:
            parts.append(f"column {column!r}")
        if row is not None:
            parts.append(f"row {row}")
        super().__init__(": ".join(parts) if len(parts) > 1 else message)


class DivergenceError(GaitcastError):
    """Training loss became non-finite; the last good checkpoint is retained."""

    def __init__(self, message, last_checkpoint=None):
        self.last_checkpoint = last_checkpoint
        super().__init__(message)


class ArtifactError(GaitcastError):
    """Unreadable, truncated, or version-mismatched artifact file."""
