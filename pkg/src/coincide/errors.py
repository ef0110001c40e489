"""Exception hierarchy shared across the package.

Every error raised by this package derives from :class:`CoincideError`,
so callers (and the CLI) can catch one type. Errors carry an optional
``hint`` with a remediation suggestion.
"""

from __future__ import annotations


class CoincideError(Exception):
    """Base class for all errors raised by this package."""

    def __init__(self, message: str, hint: str | None = None):
        super().__init__(message)
        self.hint = hint


class ConfigError(CoincideError):
    """Invalid or inconsistent configuration."""


class ValidationError(CoincideError):
    """In-memory data violates a contract (shape, range, consistency)."""


class NormViolationError(ValidationError):
    """A row that must be unit-norm is not."""


class FormatError(CoincideError):
    """An on-disk artifact is malformed."""


class BadMagicError(FormatError):
    """File does not start with the expected magic bytes."""


class UnsupportedVersionError(FormatError):
    """File declares a format version this build cannot read."""


class TruncatedFileError(FormatError):
    """File is shorter than its header promises."""


class ManifestError(FormatError):
    """Manifest JSON violates the documented schema."""
