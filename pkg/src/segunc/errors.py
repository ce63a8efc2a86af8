"""Exception hierarchy.

Everything raised for bad input derives from :class:`ValidationError`, which
the command line maps to exit code 2. Plain ``OSError`` is left alone and maps
to exit code 3.
"""


class ValidationError(ValueError):
    pass


class FormatError(ValidationError):
    """Malformed npy header or unsupported dtype."""


class ShapeError(ValidationError):
    """Array rank or shape does not match what the caller requires."""


class RangeError(ValidationError):
    """A value lies outside its allowed domain."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class DuplicatePatientError(ValidationError):
    pass


class EnsembleSizeError(ValidationError):
    """Ensemble has fewer than two members, or member counts differ."""


class UndefinedTestError(ValidationError):
    """Statistical test has no information (e.g. every paired difference is zero)."""
