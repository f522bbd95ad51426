"""Scalar special functions in log space.

Every Beta-route formula is a sum of ratios of Beta functions; evaluating the
logarithms keeps the factorials inside them from overflowing.
"""
import numpy as np
from scipy.special import gammaln, logsumexp, ndtr, xlog1py, xlogy

from tsprop.exceptions import DomainError
from tsprop.utils.validators import check_positive_int, check_real

# ln of a non-negative quantity; -inf encodes an exact zero.
LogProb = float


def log_gamma(x: float) -> float:
    """ln Γ(x) for x > 0."""
    x = check_real(x, "x")
    if x <= 0:
        raise DomainError(f"log_gamma is defined for x > 0, got {x!r}.")
    return float(gammaln(x))


def log_beta(a: float, b: float) -> float:
    """ln B(a, b) = ln Γ(a) + ln Γ(b) − ln Γ(a + b)."""
    a = check_real(a, "a")
    b = check_real(b, "b")
    if a <= 0 or b <= 0:
        raise DomainError(f"log_beta requires a > 0 and b > 0, got ({a!r}, {b!r}).")
    return float(gammaln(a) + gammaln(b) - gammaln(a + b))


def log_beta_array(a, b) -> np.ndarray:
    """Vectorised ln B(a, b); no validation, callers pass positive arrays."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return gammaln(a) + gammaln(b) - gammaln(a + b)


def std_normal_cdf(z: float) -> float:
    """Φ(z), the standard normal CDF."""
    if np.isnan(z):
        raise DomainError("std_normal_cdf is undefined for NaN.")
    return float(ndtr(z))


def _log_upper_series(x: float, a: int, b: int) -> LogProb:
    """ln Σ_{k<a} x^k (1−x)^b / ((b+k) B(1+k, b)), which equals ln(1 − I_x(a, b))."""
    k = np.arange(a, dtype=float)
    terms = xlogy(k, x) + xlog1py(b, -x) - np.log(b + k) - log_beta_array(1.0 + k, b)
    return float(logsumexp(terms))


def reg_inc_beta_int(x: float, a: int, b: int) -> float:
    """
    Regularised incomplete beta function I_x(a, b) for integer a, b ≥ 1.

    Both I_x(a, b) and 1 − I_x(a, b) are finite sums of non-negative terms
    (the second one read through I_x(a, b) = 1 − I_{1−x}(b, a)). The smaller
    of the two is returned directly or subtracted from one, so the result
    never loses digits to cancellation.
    """
    x = check_real(x, "x", min_val=0.0, max_val=1.0)
    a = check_positive_int(a, "a")
    b = check_positive_int(b, "b")

    lower = float(np.exp(_log_upper_series(1.0 - x, b, a)))
    if lower <= 0.5:
        return min(max(lower, 0.0), 1.0)
    upper = float(np.exp(_log_upper_series(x, a, b)))
    return min(max(1.0 - upper, 0.0), 1.0)
