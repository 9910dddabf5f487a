"""Exception types shared across the toolkit.

Plain ``ValueError`` is raised for bad arguments (non-positive sigma, even
kernels, dimension mismatches); the classes below mark conditions callers
may want to handle separately. The CLI maps ValueError-family errors to
exit code 1, OSError to 2, and anything else to 3.
"""


class NoForegroundError(ValueError):
    """An operation that needs foreground pixels was given none."""


class UndefinedIoUError(ValueError):
    """IoU of two empty masks is undefined."""


class ParseError(ValueError):
    """A file could not be parsed (malformed JSON, wrong top-level shape)."""


class ValidationError(ValueError):
    """Parsed data violates a schema invariant."""


class CapacityError(RuntimeError):
    """Synthetic lesion packing failed after bounded retries."""
