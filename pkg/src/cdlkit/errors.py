"""Exception types shared across the toolkit."""


class CdlError(Exception):
    """Base class for all toolkit errors."""


class InputError(CdlError):
    """Invalid argument, shape mismatch, or malformed input value."""


class FormatError(InputError):
    """Malformed tensor, manifest, or model file."""


class ConvergenceError(CdlError):
    """An iterative solver hit its cap before meeting its tolerance.

    `best` carries the best iterate found so far, when available.
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class NumericalError(CdlError):
    """Numerically degenerate problem (singular system, rank collapse)."""
