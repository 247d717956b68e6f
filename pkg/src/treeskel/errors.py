"""Exception types shared across the package."""


class TreeSkelError(Exception):
    """Base class for all package errors."""


class ParameterError(TreeSkelError, ValueError):
    """An argument is out of its valid range or inconsistent."""


class ParseError(TreeSkelError, ValueError):
    """A file could not be parsed. Carries the offending line number."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"{message} (line {line})"
        super().__init__(message)
        self.line = line


class DataError(TreeSkelError, ValueError):
    """Input data violates a precondition (missing field, wrong universe...)."""


class FitError(TreeSkelError, RuntimeError):
    """A model estimation step failed (degenerate samples, no consensus...)."""
