"""Exception types shared across the library and the command line."""


class HyperfuseError(Exception):
    """Base class for every error raised on purpose by this package."""


class ValidationError(HyperfuseError, ValueError):
    """Input failed a precondition (ranges, sizes, unknown config keys)."""


class DimensionError(HyperfuseError, ValueError):
    """Tensor shapes do not agree."""


class DomainError(HyperfuseError, ValueError):
    """A value lies outside the domain of an operation (artanh, log, ball)."""


class NumericError(HyperfuseError, ArithmeticError):
    """A non-finite value appeared where a finite one was required."""


class TargetIndexError(HyperfuseError, IndexError):
    """A class / row index is out of range."""


class TrainingAborted(HyperfuseError):
    """A worker asked a running operation to stop."""
