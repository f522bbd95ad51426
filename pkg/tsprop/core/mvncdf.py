"""Multivariate normal CDF by separation of variables and randomized lattice QMC.

The problem is transformed with a Cholesky factor whose variables are reordered
so that the most constraining (smallest expected conditional probability)
variables come first. The resulting integral over the unit cube is evaluated
on a rank-1 Richtmyer lattice (square roots of primes as generators) with a
periodizing baker transform, randomized by independent uniform shifts.
"""
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy.special import log_ndtr, ndtr, ndtri
from scipy.stats import norm

from tsprop.core.specfun import std_normal_cdf
from tsprop.exceptions import DomainError
from tsprop.utils.logger import get_logger
from tsprop.utils.seeding import child_rng
from tsprop.utils.validators import check_array, check_positive_int, check_psd, check_real, check_symmetric

logger = get_logger(__name__)

DEFAULT_TARGET_ABS_ERR = 1e-5
DEFAULT_MAX_POINTS = 2 ** 20
N_SHIFTS = 12
INITIAL_POINTS = 2 ** 9
CHUNK_POINTS = 2 ** 15
PIVOT_TOL = 1e-10
# Keeps ndtri finite at the ends of the unit interval.
_U_EPS = 1e-300
_U_MAX = 1.0 - 1e-16


@dataclass(frozen=True)
class MvnProblem:
    """P(Z ≤ upper) for Z ~ N(mean, cov)."""
    upper: np.ndarray
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        upper = np.asarray(self.upper, dtype=float).reshape(-1)
        if np.any(np.isnan(upper)):
            raise DomainError("`upper` must not contain NaN.")
        mean = check_array(np.reshape(self.mean, -1), "mean", expected_dim=1)
        cov = check_array(np.atleast_2d(self.cov), "cov", expected_dim=2)
        k = upper.shape[0]
        if k < 1:
            raise DomainError("An MVN problem needs at least one dimension.")
        if mean.shape[0] != k or cov.shape != (k, k):
            raise DomainError(
                f"Dimension mismatch: upper {upper.shape}, mean {mean.shape}, cov {cov.shape}."
            )
        check_symmetric(cov, "cov", atol=1e-10)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def k(self) -> int:
        return self.upper.shape[0]


@dataclass(frozen=True)
class MvnResult:
    value: float
    error_estimate: float
    samples_used: int


def _primes(count: int) -> np.ndarray:
    """First `count` primes."""
    limit = max(16, int(count * (np.log(count + 2) + np.log(np.log(count + 2)) + 2)))
    while True:
        sieve = np.ones(limit + 1, dtype=bool)
        sieve[:2] = False
        for p in range(2, int(limit ** 0.5) + 1):
            if sieve[p]:
                sieve[p * p::p] = False
        primes = np.flatnonzero(sieve)
        if primes.size >= count:
            return primes[:count]
        limit *= 2


def _truncated_mean(c: float) -> float:
    """E[Z | Z ≤ c] for standard normal Z."""
    if c == np.inf:
        return 0.0
    if c < -37.0:
        return c
    return -float(np.exp(norm.logpdf(c) - log_ndtr(c)))


def _reordered_cholesky(cov: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, np.ndarray, int]:
    """
    Pivoted Cholesky factor with Genz-Bretz variable reordering.

    Returns (L, b_perm, rank). Rows [0, rank) have positive pivots; the
    remaining rows are linear functions of the first `rank` variables and act
    as hard constraints.
    """
    k = b.shape[0]
    c = cov.copy()
    b = b.copy()
    L = np.zeros((k, k))
    y = np.zeros(k)
    scale = max(float(np.max(np.diag(c))), np.finfo(float).tiny)
    tol = PIVOT_TOL * scale

    rank = 0
    for i in range(k):
        rest = np.arange(i, k)
        cond_var = np.diag(c)[rest] - np.sum(L[rest, :i] ** 2, axis=1)
        candidates = rest[cond_var > tol]
        if candidates.size == 0:
            break
        cond_mean = L[candidates, :i] @ y[:i]
        cond_sd = np.sqrt(cond_var[candidates - i])
        with np.errstate(divide="ignore", invalid="ignore"):
            bounds = (b[candidates] - cond_mean) / cond_sd
        j = int(candidates[np.argmin(log_ndtr(bounds))])

        if j != i:
            c[[i, j], :] = c[[j, i], :]
            c[:, [i, j]] = c[:, [j, i]]
            b[[i, j]] = b[[j, i]]
            L[[i, j], :i] = L[[j, i], :i]

        pivot = np.sqrt(c[i, i] - np.sum(L[i, :i] ** 2))
        L[i, i] = pivot
        if i + 1 < k:
            L[i + 1:, i] = (c[i + 1:, i] - L[i + 1:, :i] @ L[i, :i]) / pivot
        bound = (b[i] - L[i, :i] @ y[:i]) / pivot
        y[i] = _truncated_mean(bound)
        rank += 1

    return L, b, rank


def _lattice_chunk(
    generators: np.ndarray, shift: np.ndarray, start: int, stop: int
) -> np.ndarray:
    """Baker-transformed, shifted lattice points j·q + Δ for j in [start, stop); shape (m, P)."""
    j = np.arange(start + 1, stop + 1, dtype=float)
    x = np.mod(generators[:, None] * j[None, :] + shift[:, None], 1.0)
    return np.abs(2.0 * x - 1.0)


def _integrand(w: np.ndarray, L: np.ndarray, b: np.ndarray, rank: int, n_sampled: int) -> np.ndarray:
    """Separation-of-variables integrand at points w, shape (n_sampled, P)."""
    k = b.shape[0]
    n_points = w.shape[1]
    y = np.zeros((rank, n_points))
    f = np.ones(n_points)
    for i in range(rank):
        s = L[i, :i] @ y[:i] if i else 0.0
        e = ndtr((b[i] - s) / L[i, i])
        f *= e
        if i < n_sampled:
            y[i] = ndtri(np.clip(w[i] * e, _U_EPS, _U_MAX))
    scale = max(float(np.max(np.abs(L))), 1.0) if L.size else 1.0
    for i in range(rank, k):
        s = L[i, :rank] @ y
        f *= (b[i] - s) >= -PIVOT_TOL * scale
    return f


def _shift_mean(
    L: np.ndarray, b: np.ndarray, rank: int, n_sampled: int,
    generators: np.ndarray, rng: np.random.Generator, n_points: int,
) -> float:
    shift = rng.random(n_sampled)
    total = 0.0
    for start in range(0, n_points, CHUNK_POINTS):
        stop = min(start + CHUNK_POINTS, n_points)
        w = _lattice_chunk(generators, shift, start, stop)
        total += float(np.sum(_integrand(w, L, b, rank, n_sampled)))
    return total / n_points


def mvn_cdf(
    problem: MvnProblem,
    target_abs_err: float = DEFAULT_TARGET_ABS_ERR,
    max_points: int = DEFAULT_MAX_POINTS,
    rng_seed: int = 0,
) -> MvnResult:
    """
    Evaluate P(Z ≤ upper) for Z ~ N(mean, cov).

    Args:
        problem: the MVN problem.
        target_abs_err: requested absolute error, in (0, 0.1].
        max_points: lattice points per shift at which refinement stops.
        rng_seed: seed for the random lattice shifts.

    Returns:
        MvnResult whose error_estimate is three standard errors across shifts.
        When max_points is hit first, the larger error estimate is reported.
    """
    target_abs_err = check_real(
        target_abs_err, "target_abs_err", min_val=0.0, max_val=0.1, include_boundaries="right"
    )
    max_points = check_positive_int(max_points, "max_points")
    b = problem.upper - problem.mean

    if problem.k == 1:
        var = float(problem.cov[0, 0])
        if var < 0:
            raise DomainError(f"Variance must be non-negative, got {var}.")
        if var == 0.0:
            return MvnResult(float(b[0] >= 0), 0.0, 0)
        return MvnResult(std_normal_cdf(b[0] / np.sqrt(var)), 0.0, 0)

    check_psd(problem.cov, "cov")
    L, b_perm, rank = _reordered_cholesky(problem.cov, b)

    if rank == 0:
        # Degenerate at the mean.
        return MvnResult(float(np.all(b >= 0)), 0.0, 0)

    # The last stochastic variable needs no sample unless hard constraints follow it.
    n_sampled = rank - 1 if rank == problem.k else rank
    generators = np.sqrt(_primes(n_sampled).astype(float))
    n_points = min(INITIAL_POINTS, max_points)
    samples_used = 0
    level = 0
    while True:
        means = np.array([
            _shift_mean(L, b_perm, rank, n_sampled, generators,
                        child_rng(rng_seed, level, s), n_points)
            for s in range(N_SHIFTS)
        ])
        samples_used += N_SHIFTS * n_points
        value = float(np.mean(means))
        error = 3.0 * float(np.std(means, ddof=1)) / np.sqrt(N_SHIFTS)
        logger.debug(
            "mvn_cdf k=%d level=%d points/shift=%d value=%.10f err=%.3e",
            problem.k, level, n_points, value, error,
        )
        if error <= target_abs_err:
            break
        if n_points >= max_points:
            logger.warning(
                "mvn_cdf hit max_points=%d with error %.3e > target %.3e",
                max_points, error, target_abs_err,
            )
            break
        n_points = min(2 * n_points, max_points)
        level += 1

    return MvnResult(min(max(value, 0.0), 1.0), error, samples_used)
