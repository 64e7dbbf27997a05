"""
Exception hierarchy for ShapeSeeker

Command-line exit codes are attached to the exception classes so the entry
point can map any failure to the documented code.
"""

from typing import Any, Optional


class ShapeSeekerError(Exception):
    """Base class for all ShapeSeeker errors"""

    exit_code: int = 2


class ConfigError(ShapeSeekerError):
    """Invalid configuration document or override"""

    exit_code = 1


class DataError(ShapeSeekerError):
    """Malformed, truncated, or inconsistent input data"""

    exit_code = 2


class ShapeMismatchError(DataError, ValueError):
    """Array shapes disagree with what an operation or file declares"""

    def __init__(self, message: str, name: Optional[str] = None):
        super().__init__(message)
        self.name = name


class NumericalDomainError(ShapeSeekerError, ArithmeticError):
    """A value left the domain an operation is defined on"""

    exit_code = 3


class BehindCameraError(ShapeSeekerError, ValueError):
    """A point has non-positive depth in the camera frame"""

    exit_code = 2


class DivergenceError(ShapeSeekerError):
    """Training produced a non-finite loss

    Carries the last good field and loss history so callers can still save them.
    """

    exit_code = 3

    def __init__(self, message: str, field: Any = None, history: Any = None, epoch: int = 0):
        super().__init__(message)
        self.field = field
        self.history = history
        self.epoch = epoch
