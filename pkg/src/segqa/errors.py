"""Shared exception types.

The CLI maps these onto exit codes: ValidationError (and plain ValueError)
exits 1, ParseError and OS-level failures exit 2.
"""


class SegqaError(Exception):
    """Base class for all package errors."""


class ValidationError(SegqaError, ValueError):
    """Invalid argument, precondition violation, or inconsistent inputs."""


class GridMismatchError(ValidationError):
    """Two volumes that must share a grid do not."""


class ParseError(SegqaError):
    """A file exists but its contents cannot be interpreted."""
