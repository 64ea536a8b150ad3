"""Exceptions raised by the subco_tracker package."""

from typing import Optional


class SubcoError(Exception):
    """Base class for all package errors."""


class MotFormatError(SubcoError, ValueError):
    """A MOTChallenge text file could not be parsed."""

    def __init__(self, message: str, line_no: Optional[int] = None):
        self.line_no = line_no
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)


class ConfigError(SubcoError, ValueError):
    """Invalid configuration value or unknown configuration key."""


class DimensionError(SubcoError, ValueError):
    """Array shapes do not line up."""


class CropError(SubcoError, ValueError):
    """A box does not intersect the image it should be cropped from."""
