from typing import Any, Dict, Optional

import numpy as np


class TsPropError(Exception):
    """Base class for every error raised by tsprop."""


class DomainError(TsPropError, ValueError):
    """An argument lies outside the domain of the operation."""


class MatrixError(DomainError):
    """A covariance matrix is not symmetric positive semidefinite."""


class DegenerateVarianceError(DomainError):
    """An outcome variance collapsed to zero or below."""


class SupportError(DomainError):
    """The logging policy puts zero mass on a logged action."""


class SizeError(DomainError):
    """The requested computation exceeds a hard size guard."""


class DegenerateWeightsError(DomainError):
    """Importance weights sum to zero."""


class InputError(TsPropError, ValueError):
    """Malformed user input: files, JSON payloads, names."""


class NumericalError(TsPropError, ArithmeticError):
    """A numerical routine did not reach its accuracy contract."""


class AccuracyError(NumericalError):
    def __init__(self, message: str, best_estimate: float, abs_err: float):
        super().__init__(message)
        self.best_estimate = best_estimate
        self.abs_err = abs_err


class FitError(NumericalError):
    def __init__(
        self,
        message: str,
        best_weights: Optional[np.ndarray] = None,
        diagnostics: Optional[Dict[str, Any]] = None,
    ):
        super().__init__(message)
        self.best_weights = best_weights
        self.diagnostics = diagnostics or {}
