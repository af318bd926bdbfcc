"""Exception hierarchy shared across the toolkit.

The CLI maps ValidationError (and subclasses) to exit code 1 and every
other RobocalError to exit code 2.
"""


class RobocalError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(RobocalError):
    """Bad arguments, malformed files or violated preconditions."""


class FileFormatError(ValidationError):
    """Malformed input file; carries path and 1-based line number."""

    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        where = f"{self.path}:{line}" if line is not None else self.path
        super().__init__(f"{where}: {message}")


class DegenerateGeometryError(RobocalError):
    """Input geometry does not determine a unique solution."""


class InconsistentMeasurementError(RobocalError):
    """Measured data contradicts the rigid-body assumption."""


class SearchFailureError(RobocalError):
    """A randomized search exhausted its evaluation budget."""
