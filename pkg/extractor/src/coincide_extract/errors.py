"""Typed failures for the extraction pipeline."""

from __future__ import annotations


class ExtractError(Exception):
    """Base class; carries an optional remediation hint."""

    def __init__(self, message: str, hint: str | None = None):
        super().__init__(message)
        self.hint = hint


class ConfigError(ExtractError):
    """Invalid extraction configuration."""


class DatasetError(ExtractError):
    """The conversation dataset file is malformed."""


class SegmentationError(ExtractError):
    """The token stream cannot be split into visual and text segments."""


class ActivationError(ExtractError):
    """Captured activations are unusable (wrong shape, non-finite, zero)."""
