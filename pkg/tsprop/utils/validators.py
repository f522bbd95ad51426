import numbers
from typing import Optional

import numpy as np
from sklearn.utils import check_scalar

from tsprop.exceptions import DomainError, MatrixError


def check_real(
    x,
    name: str,
    min_val: Optional[float] = None,
    max_val: Optional[float] = None,
    include_boundaries: str = "both",
) -> float:
    """Validate a finite real scalar, returning it as float."""
    if isinstance(x, bool) or not isinstance(x, numbers.Real):
        raise DomainError(f"`{name}` must be a real number, got {x!r}.")
    if not np.isfinite(x):
        raise DomainError(f"`{name}` must be finite, got {x!r}.")
    try:
        check_scalar(
            x,
            name=name,
            target_type=numbers.Real,
            min_val=min_val,
            max_val=max_val,
            include_boundaries=include_boundaries,
        )
    except (TypeError, ValueError) as e:
        raise DomainError(str(e)) from e
    return float(x)


def check_positive_int(x, name: str, min_val: int = 1) -> int:
    """Validate an integer ≥ min_val. Integral floats (e.g. 3.0) are accepted."""
    if isinstance(x, bool):
        raise DomainError(f"`{name}` must be an integer, got {x!r}.")
    if isinstance(x, numbers.Real) and not isinstance(x, numbers.Integral):
        if not float(x).is_integer():
            raise DomainError(f"`{name}` must be an integer, got {x!r}.")
        x = int(x)
    try:
        check_scalar(x, name=name, target_type=numbers.Integral, min_val=min_val)
    except (TypeError, ValueError) as e:
        raise DomainError(str(e)) from e
    return int(x)


def check_array(array, name: str, expected_dim: int) -> np.ndarray:
    """Convert to a float ndarray of the expected dimension with finite entries."""
    arr = np.asarray(array, dtype=float)
    if arr.ndim != expected_dim:
        raise DomainError(
            f"`{name}` must be {expected_dim}D array, but got {arr.ndim}D array."
        )
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"`{name}` must contain only finite values.")
    return arr


def check_symmetric(matrix: np.ndarray, name: str, atol: float = 1e-10) -> np.ndarray:
    """Square, symmetric within `atol` relative to the matrix scale."""
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise DomainError(f"`{name}` must be a square matrix, got shape {matrix.shape}.")
    scale = max(1.0, float(np.max(np.abs(matrix))) if matrix.size else 1.0)
    if not np.allclose(matrix, matrix.T, rtol=0.0, atol=atol * scale):
        raise MatrixError(f"`{name}` must be symmetric.")
    return matrix


def check_psd(matrix: np.ndarray, name: str, rel_tol: float = 1e-8) -> np.ndarray:
    """Smallest eigenvalue ≥ -rel_tol·trace."""
    eigvals = np.linalg.eigvalsh(matrix)
    trace = max(float(np.trace(matrix)), np.finfo(float).tiny)
    if eigvals.min() < -rel_tol * trace:
        raise MatrixError(
            f"`{name}` is not positive semidefinite (smallest eigenvalue {eigvals.min():.3e})."
        )
    return matrix
