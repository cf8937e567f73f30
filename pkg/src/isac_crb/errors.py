"""Exception hierarchy. CLI exit codes hang off ``exit_code``."""

from __future__ import annotations

import numpy as np


class IsacError(Exception):
    exit_code = 1


class ValidationError(IsacError, ValueError):
    """Bad scenario or argument. ``field`` names the offending config path."""

    exit_code = 2

    def __init__(self, message: str, field: str | None = None):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)


class GeometryError(ValidationError):
    """Coincident positions or a target outside the array field of view."""


class EndfireDegenerateError(ValidationError):
    """Steering derivative vanishes (cos(theta) = 0)."""


class InfeasibleError(IsacError):
    exit_code = 3

    def __init__(self, message: str, violated: list | None = None):
        self.violated = list(violated or [])
        super().__init__(message)


class UnidentifiableError(IsacError, np.linalg.LinAlgError):
    """Singular Fisher information; ``null_space`` spans the lost directions."""

    exit_code = 3

    def __init__(self, message: str, null_space: np.ndarray):
        self.null_space = null_space
        super().__init__(message)


class ConvergenceError(IsacError):
    exit_code = 4

    def __init__(self, message: str, partial=None):
        self.partial = partial
        super().__init__(message)
