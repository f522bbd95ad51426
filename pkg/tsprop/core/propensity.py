"""
Action propensities under Thompson sampling.

π(a_i | x) is the probability that a_i's sampled reward is the largest over
the action set. Every formula is stated for one target action; the others are
addressed through index arrays, never by mutating the input BeliefSet.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable, List, Optional, Union

import numpy as np
from scipy.integrate import quad
from scipy.special import log_ndtr, logsumexp
from scipy.stats import norm

from tsprop.core.mvncdf import DEFAULT_MAX_POINTS, DEFAULT_TARGET_ABS_ERR, MvnProblem, mvn_cdf
from tsprop.core.specfun import log_beta, log_beta_array
from tsprop.exceptions import AccuracyError, DomainError, SizeError
from tsprop.models.beliefs import BeliefKind, BeliefSet
from tsprop.utils.logger import get_logger
from tsprop.utils.seeding import derive_seed
from tsprop.utils.validators import check_array, check_positive_int, check_real

logger = get_logger(__name__)

INCL_EXCL_MAX_ACTIONS = 20
AUTO_INCL_EXCL_MAX_ACTIONS = 10
JOINT_TIE_TOL = 1e-12

GRID_Z_MAX = 10.0
GRID_BASE_HALF_NODES = 40
GRID_MAX_HALF_NODES = 2 ** 15
# h·sqrt(1 + Σ r_j²) ≤ 0.75 keeps the trapezoid error near exp(−2π²/0.75²).
GRID_STEP_CONST = 0.75
GRID_CHUNK_ELEMENTS = 2 ** 22

DEFAULT_QUAD_REL_TOL = 1e-10
QUAD_ABS_FLOOR = 1e-12
QUAD_LIMIT = 500


class PropensityMethod(str, Enum):
    GAUSSIAN_MVN = "gaussian_mvn"
    GAUSSIAN_JOINT = "gaussian_joint"
    BETA_DIRECT = "beta_direct"
    BETA_INCL_EXCL = "beta_inclexcl"
    QUADRATURE = "quadrature"
    MONTE_CARLO = "monte_carlo"


class BetaRoute(str, Enum):
    AUTO = "auto"
    DIRECT = "direct"
    INCL_EXCL = "inclexcl"


@dataclass(frozen=True)
class PropensityEstimate:
    """Propensity of a single target action."""
    value: float
    abs_err: float
    method: PropensityMethod


@dataclass(frozen=True)
class PropensityVector:
    """Propensities of every action in a BeliefSet."""
    probs: np.ndarray
    method: PropensityMethod
    abs_err: float = 0.0

    def __post_init__(self):
        probs = np.clip(np.asarray(self.probs, dtype=float), 0.0, 1.0)
        probs.setflags(write=False)
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "method", PropensityMethod(self.method))

    @property
    def n(self) -> int:
        return self.probs.shape[0]

    def to_dict(self) -> dict:
        return {
            "probs": [float(p) for p in self.probs],
            "method": self.method.value,
            "abs_err": float(self.abs_err),
        }


def _check_target(belief_set: BeliefSet, target: int) -> int:
    target = check_positive_int(target, "target", min_val=0)
    if target >= belief_set.n:
        raise DomainError(f"target {target} is out of range for {belief_set.n} actions.")
    return target


def _others(n: int, target: int) -> np.ndarray:
    return np.array([j for j in range(n) if j != target], dtype=int)


def _require_kind(belief_set: BeliefSet, *kinds: BeliefKind) -> None:
    if belief_set.kind not in kinds:
        expected = ", ".join(k.value for k in kinds)
        raise DomainError(f"Expected {expected} beliefs, got {belief_set.kind.value}.")


# ---------------------------------------------------------------------------
# Gaussian beliefs
# ---------------------------------------------------------------------------

def gaussian_propensity(
    belief_set: BeliefSet,
    target: int,
    target_abs_err: float = DEFAULT_TARGET_ABS_ERR,
    rng_seed: int = 0,
    max_points: int = DEFAULT_MAX_POINTS,
) -> PropensityEstimate:
    """
    Propensity for independent Normal beliefs as a single MVN CDF.

    With the target relabelled first: F(μ_t·1 | m, V) where m holds the other
    means and V = diag(σ_j²) + σ_t²·11ᵀ. Any joint covariance is ignored.
    """
    _require_kind(belief_set, BeliefKind.NORMAL)
    t = _check_target(belief_set, target)
    mu, sigma2 = belief_set.mu, belief_set.sigma2
    others = _others(belief_set.n, t)

    upper = np.full(others.size, mu[t])
    cov = np.diag(sigma2[others]) + sigma2[t]
    result = mvn_cdf(MvnProblem(upper, mu[others], cov), target_abs_err, max_points, rng_seed)
    return PropensityEstimate(result.value, result.error_estimate, PropensityMethod.GAUSSIAN_MVN)


def gaussian_propensity_joint(
    belief_set: BeliefSet,
    target: int,
    target_abs_err: float = DEFAULT_TARGET_ABS_ERR,
    rng_seed: int = 0,
    max_points: int = DEFAULT_MAX_POINTS,
) -> PropensityEstimate:
    """
    Propensity for jointly Gaussian beliefs, using the full covariance.

    Works on the differences d_j = r_t − r_j. Differences with zero variance
    are constants: positive ones are dropped, a negative one makes the
    propensity zero, and zero ones tie the action with the target. The tied
    group shares the mass of the merged action uniformly.
    """
    _require_kind(belief_set, BeliefKind.NORMAL)
    if belief_set.joint_cov is None:
        raise DomainError("gaussian_propensity_joint requires a joint covariance.")
    t = _check_target(belief_set, target)
    C = np.asarray(belief_set.joint_cov)
    mu = belief_set.mu
    others = _others(belief_set.n, t)

    diff_mean = mu[t] - mu[others]
    diff_cov = (
        C[t, t]
        - C[t, others][:, None]
        - C[others, t][None, :]
        + C[np.ix_(others, others)]
    )
    diff_cov = 0.5 * (diff_cov + diff_cov.T)
    diff_var = np.diag(diff_cov)

    var_tol = JOINT_TIE_TOL * max(float(np.max(np.diag(C))), np.finfo(float).tiny)
    mean_tol = JOINT_TIE_TOL * max(1.0, float(np.max(np.abs(mu))))
    degenerate = diff_var <= var_tol
    if np.any(degenerate & (diff_mean < -mean_tol)):
        return PropensityEstimate(0.0, 0.0, PropensityMethod.GAUSSIAN_JOINT)
    tied = degenerate & (np.abs(diff_mean) <= mean_tol)
    share = 1.0 / (1 + int(tied.sum()))

    keep = np.flatnonzero(~degenerate)
    if keep.size == 0:
        return PropensityEstimate(share, 0.0, PropensityMethod.GAUSSIAN_JOINT)

    problem = MvnProblem(
        upper=np.zeros(keep.size),
        mean=-diff_mean[keep],
        cov=diff_cov[np.ix_(keep, keep)],
    )
    result = mvn_cdf(problem, target_abs_err, max_points, rng_seed)
    return PropensityEstimate(
        share * result.value, share * result.error_estimate, PropensityMethod.GAUSSIAN_JOINT
    )


def lognormal_propensity(
    belief_set: BeliefSet,
    target: int,
    target_abs_err: float = DEFAULT_TARGET_ABS_ERR,
    rng_seed: int = 0,
    max_points: int = DEFAULT_MAX_POINTS,
) -> PropensityEstimate:
    """exp is monotone, so the argmax is decided on the underlying normals."""
    _require_kind(belief_set, BeliefKind.LOGNORMAL)
    return gaussian_propensity(
        belief_set.as_normal(), target, target_abs_err, rng_seed, max_points
    )


def _grid_half_nodes(ratio: np.ndarray) -> np.ndarray:
    """Half-width node count per row: 40·2^k, the smallest meeting the step rule."""
    need = GRID_Z_MAX * np.sqrt(1.0 + np.sum(ratio ** 2, axis=1)) / GRID_STEP_CONST
    max_level = int(np.log2(GRID_MAX_HALF_NODES // GRID_BASE_HALF_NODES)) + 1
    levels = np.ceil(np.log2(np.clip(need / GRID_BASE_HALF_NODES, 1.0, 2.0 ** max_level)))
    return np.minimum(GRID_BASE_HALF_NODES * 2 ** levels.astype(int), GRID_MAX_HALF_NODES)


def _grid_rows(shift: np.ndarray, ratio: np.ndarray, half: int):
    z = np.linspace(-GRID_Z_MAX, GRID_Z_MAX, 2 * half + 1)
    h = z[1] - z[0]
    log_f = np.tile(norm.logpdf(z), (shift.shape[0], 1))
    for j in range(shift.shape[1]):
        log_f += log_ndtr(shift[:, j, None] + ratio[:, j, None] * z)
    fine = h * np.exp(logsumexp(log_f, axis=1))
    coarse = 2.0 * h * np.exp(logsumexp(log_f[:, ::2], axis=1))
    return np.clip(fine, 0.0, 1.0), np.abs(fine - coarse)


def grid_target_propensities(mu: np.ndarray, sigma2: np.ndarray, targets: np.ndarray):
    """
    Trapezoid-rule propensities of one target action per row.

    Row i integrates φ(z)·∏_{j≠t} Φ((μ_t + σ_t z − μ_j)/σ_j) over z ∈ [−10, 10]
    with t = targets[i]. The integrand is entire and decays like φ, so the
    equispaced rule converges geometrically; the spacing shrinks with
    sqrt(1 + Σ_j (σ_t/σ_j)²). Each row's result depends only on that row,
    whatever else is in the batch.

    Args:
        mu: (m, n) means of independent normal beliefs.
        sigma2: (m, n) positive variances.
        targets: (m,) target action per row.

    Returns:
        (values, abs_err), both shape (m,). abs_err compares the rule with the
        one on every other node.
    """
    mu = check_array(mu, "mu", expected_dim=2)
    sigma2 = check_array(sigma2, "sigma2", expected_dim=2)
    targets = np.asarray(targets, dtype=int).reshape(-1)
    m, n = mu.shape
    if sigma2.shape != (m, n) or targets.shape[0] != m:
        raise DomainError(
            f"Shape mismatch: mu {mu.shape}, sigma2 {sigma2.shape}, targets {targets.shape}."
        )
    if n < 2:
        raise DomainError(f"At least 2 actions are required, got {n}.")
    if np.any(sigma2 <= 0):
        raise DomainError("`sigma2` must be positive.")
    if np.any((targets < 0) | (targets >= n)):
        raise DomainError(f"targets must lie in [0, {n}).")

    rows = np.arange(m)
    mask = np.ones((m, n), dtype=bool)
    mask[rows, targets] = False
    other_idx = np.nonzero(mask)[1].reshape(m, n - 1)
    sd = np.sqrt(sigma2)
    sd_o = np.take_along_axis(sd, other_idx, axis=1)
    mu_o = np.take_along_axis(mu, other_idx, axis=1)
    ratio = sd[rows, targets][:, None] / sd_o
    shift = (mu[rows, targets][:, None] - mu_o) / sd_o

    half = _grid_half_nodes(ratio)
    values = np.empty(m)
    abs_err = np.empty(m)
    for level in np.unique(half):
        sel = np.flatnonzero(half == level)
        chunk = max(1, GRID_CHUNK_ELEMENTS // ((n - 1) * (2 * int(level) + 1)))
        for start in range(0, sel.size, chunk):
            idx = sel[start:start + chunk]
            values[idx], abs_err[idx] = _grid_rows(shift[idx], ratio[idx], int(level))
    return values, abs_err


def gaussian_propensity_grid(belief_set: BeliefSet, target: int) -> PropensityEstimate:
    """Propensity for independent (log)normal beliefs by the trapezoid rule; marginals only."""
    _require_kind(belief_set, BeliefKind.NORMAL, BeliefKind.LOGNORMAL)
    normal = belief_set.as_normal()
    t = _check_target(normal, target)
    values, abs_err = grid_target_propensities(normal.mu[None], normal.sigma2[None], [t])
    return PropensityEstimate(float(values[0]), float(abs_err[0]), PropensityMethod.QUADRATURE)


# ---------------------------------------------------------------------------
# Beta beliefs with integer parameters
# ---------------------------------------------------------------------------

def _require_integer_beta(belief_set: BeliefSet) -> None:
    _require_kind(belief_set, BeliefKind.BETA)
    if not belief_set.is_integer:
        raise DomainError(
            "Analytic Beta propensities need integer parameters ≥ 1; "
            "use quadrature_propensity for real parameters."
        )


def _log_pmin(alpha_t: float, beta_t: float, alphas: np.ndarray, betas: np.ndarray) -> float:
    """
    ln P(p_t < p_j for every other j), by convolution over s = Σ_j k_j.

    Each other action contributes weights g_j(k) = 1 / ((β_j + k) B(1 + k, β_j))
    for k < α_j; the summand depends on the k_j only through their sum, so
    the nested sum collapses into a convolution of these weight sequences.
    """
    log_h = np.zeros(1)
    for a, b in zip(alphas, betas):
        k = np.arange(int(a), dtype=float)
        log_g = -np.log(b + k) - log_beta_array(1.0 + k, b)
        conv = np.full(log_h.size + k.size - 1, -np.inf)
        for kk in range(k.size):
            window = conv[kk:kk + log_h.size]
            conv[kk:kk + log_h.size] = np.logaddexp(window, log_h + log_g[kk])
        log_h = conv

    s = np.arange(log_h.size, dtype=float)
    total_beta = beta_t + float(np.sum(betas))
    log_terms = log_h + log_beta_array(alpha_t + s, total_beta) - log_beta(alpha_t, beta_t)
    return float(logsumexp(log_terms))


def _log_pmin_nested(alpha_t: float, beta_t: float, alphas: np.ndarray, betas: np.ndarray) -> float:
    """Term-by-term nested sum; exponential in the number of actions."""
    total_beta = beta_t + float(np.sum(betas))
    log_norm = log_beta(alpha_t, beta_t)
    log_terms: List[float] = []
    for ks in itertools.product(*(range(int(a)) for a in alphas)):
        ks = np.asarray(ks, dtype=float)
        log_terms.append(
            float(log_beta_array(alpha_t + ks.sum(), total_beta))
            - log_norm
            - float(np.sum(np.log(betas + ks) + log_beta_array(1.0 + ks, betas)))
        )
    return float(logsumexp(log_terms))


def _prob(log_value: float) -> float:
    return min(max(float(np.exp(log_value)), 0.0), 1.0)


def beta_pairwise(alpha_i: int, beta_i: int, alpha_j: int, beta_j: int) -> float:
    """P(p_i > p_j) for p_i ~ Beta(α_i, β_i), p_j ~ Beta(α_j, β_j), integer parameters."""
    alpha_i = check_positive_int(alpha_i, "alpha_i")
    beta_i = check_positive_int(beta_i, "beta_i")
    alpha_j = check_positive_int(alpha_j, "alpha_j")
    beta_j = check_positive_int(beta_j, "beta_j")

    m = np.arange(alpha_i, dtype=float)
    log_terms = (
        log_beta_array(alpha_j + m, beta_i + beta_j)
        - np.log(beta_i + m)
        - log_beta_array(1.0 + m, beta_i)
        - log_beta(alpha_j, beta_j)
    )
    return _prob(logsumexp(log_terms))


def beta_pmin(belief_set: BeliefSet, target: int, naive: bool = False) -> float:
    """
    Probability that the target's draw is strictly the smallest.

    Args:
        belief_set: Beta beliefs with integer parameters.
        target: index of the target action.
        naive: evaluate the nested sum term by term instead of the convolution.
    """
    _require_integer_beta(belief_set)
    t = _check_target(belief_set, target)
    alpha, beta = belief_set.alpha, belief_set.beta
    others = _others(belief_set.n, t)
    log_pmin = _log_pmin_nested if naive else _log_pmin
    return _prob(log_pmin(alpha[t], beta[t], alpha[others], beta[others]))


def beta_pmax_direct(belief_set: BeliefSet, target: int) -> float:
    """P_max through the symmetry p → 1 − p: the largest p is the smallest 1 − p."""
    _require_integer_beta(belief_set)
    return beta_pmin(belief_set.swapped(), target)


def beta_pmax_inclexcl(belief_set: BeliefSet, target: int) -> float:
    """P_max by inclusion-exclusion over every subset of the other actions."""
    _require_integer_beta(belief_set)
    t = _check_target(belief_set, target)
    if belief_set.n > INCL_EXCL_MAX_ACTIONS:
        raise SizeError(
            f"Inclusion-exclusion is limited to {INCL_EXCL_MAX_ACTIONS} actions, "
            f"got {belief_set.n}."
        )
    alpha, beta = belief_set.alpha, belief_set.beta
    others = _others(belief_set.n, t)

    terms = [1.0]
    for size in range(1, others.size + 1):
        sign = -1.0 if size % 2 else 1.0
        for subset in itertools.combinations(others, size):
            idx = np.asarray(subset, dtype=int)
            terms.append(sign * float(np.exp(_log_pmin(alpha[t], beta[t], alpha[idx], beta[idx]))))
    return min(max(math.fsum(terms), 0.0), 1.0)


def beta_propensities(belief_set: BeliefSet, route: Union[BetaRoute, str] = BetaRoute.AUTO) -> PropensityVector:
    """
    Propensities of every action for integer Beta beliefs.

    AUTO takes the direct formula when Σβ ≤ Σα (its convolution runs over the
    β axis), otherwise inclusion-exclusion for up to 10 actions, otherwise
    the direct formula.
    """
    _require_integer_beta(belief_set)
    route = BetaRoute(route)
    if route is BetaRoute.AUTO:
        if belief_set.beta.sum() <= belief_set.alpha.sum():
            route = BetaRoute.DIRECT
        elif belief_set.n <= AUTO_INCL_EXCL_MAX_ACTIONS:
            route = BetaRoute.INCL_EXCL
        else:
            route = BetaRoute.DIRECT
    logger.debug("beta_propensities n=%d route=%s", belief_set.n, route.value)

    if route is BetaRoute.DIRECT:
        fn, method = beta_pmax_direct, PropensityMethod.BETA_DIRECT
    else:
        fn, method = beta_pmax_inclexcl, PropensityMethod.BETA_INCL_EXCL
    probs = np.array([fn(belief_set, t) for t in range(belief_set.n)])
    return PropensityVector(probs, method, 0.0)


# ---------------------------------------------------------------------------
# Generic one-dimensional integral
# ---------------------------------------------------------------------------

def quadrature_propensity(
    belief_set: BeliefSet, target: int, rel_tol: float = DEFAULT_QUAD_REL_TOL
) -> float:
    """
    Propensity by adaptive quadrature of ∫ f_t(r) ∏_j F_j(r) dr.

    Substituting u = F_t(r) turns the integral into ∫₀¹ ∏_j F_j(F_t⁻¹(u)) du,
    a bounded integrand on the unit interval for every belief kind. Marginals
    only.

    Raises:
        AccuracyError: the estimated error exceeds max(rel_tol·value, 1e-12).
    """
    t = _check_target(belief_set, target)
    rel_tol = check_real(rel_tol, "rel_tol", min_val=0.0, include_boundaries="neither")
    dists = [b.distribution() for b in belief_set.beliefs]
    target_dist = dists[t]
    other_dists = [dists[j] for j in _others(belief_set.n, t)]

    def integrand(u: float) -> float:
        r = target_dist.ppf(u)
        value = 1.0
        for dist in other_dists:
            value *= dist.cdf(r)
        return float(value)

    value, abs_err, *rest = quad(
        integrand, 0.0, 1.0, epsabs=QUAD_ABS_FLOOR * 1e-2, epsrel=rel_tol,
        limit=QUAD_LIMIT, full_output=1,
    )
    if abs_err > max(rel_tol * abs(value), QUAD_ABS_FLOOR):
        raise AccuracyError(
            f"Quadrature reached error {abs_err:.3e}, above the requested relative tolerance {rel_tol:.1e}.",
            best_estimate=float(value),
            abs_err=float(abs_err),
        )
    return min(max(float(value), 0.0), 1.0)


# ---------------------------------------------------------------------------
# Vector forms
# ---------------------------------------------------------------------------

def _vector(
    belief_set: BeliefSet,
    single: Callable[..., PropensityEstimate],
    method: PropensityMethod,
    rng_seed: int,
    **kwargs,
) -> PropensityVector:
    estimates = [
        single(belief_set, t, rng_seed=derive_seed(rng_seed, "propensity-target", t), **kwargs)
        for t in range(belief_set.n)
    ]
    return PropensityVector(
        np.array([e.value for e in estimates]),
        method,
        max(e.abs_err for e in estimates),
    )


def gaussian_propensities(
    belief_set: BeliefSet,
    joint: bool = False,
    target_abs_err: float = DEFAULT_TARGET_ABS_ERR,
    rng_seed: int = 0,
    max_points: int = DEFAULT_MAX_POINTS,
) -> PropensityVector:
    if joint:
        return _vector(
            belief_set, gaussian_propensity_joint, PropensityMethod.GAUSSIAN_JOINT, rng_seed,
            target_abs_err=target_abs_err, max_points=max_points,
        )
    return _vector(
        belief_set, gaussian_propensity, PropensityMethod.GAUSSIAN_MVN, rng_seed,
        target_abs_err=target_abs_err, max_points=max_points,
    )


def lognormal_propensities(
    belief_set: BeliefSet,
    target_abs_err: float = DEFAULT_TARGET_ABS_ERR,
    rng_seed: int = 0,
    max_points: int = DEFAULT_MAX_POINTS,
) -> PropensityVector:
    _require_kind(belief_set, BeliefKind.LOGNORMAL)
    return gaussian_propensities(
        belief_set.as_normal(), False, target_abs_err, rng_seed, max_points
    )


def grid_propensities(belief_set: BeliefSet) -> PropensityVector:
    _require_kind(belief_set, BeliefKind.NORMAL, BeliefKind.LOGNORMAL)
    normal = belief_set.as_normal()
    n = normal.n
    values, abs_err = grid_target_propensities(
        np.tile(normal.mu, (n, 1)), np.tile(normal.sigma2, (n, 1)), np.arange(n)
    )
    return PropensityVector(values, PropensityMethod.QUADRATURE, float(np.max(abs_err)))


def quadrature_propensities(
    belief_set: BeliefSet, rel_tol: float = DEFAULT_QUAD_REL_TOL
) -> PropensityVector:
    probs = np.array([quadrature_propensity(belief_set, t, rel_tol) for t in range(belief_set.n)])
    abs_err = max(rel_tol * float(np.max(probs)), QUAD_ABS_FLOOR)
    return PropensityVector(probs, PropensityMethod.QUADRATURE, abs_err)


def propensities(
    belief_set: BeliefSet,
    route: Union[BetaRoute, str] = BetaRoute.AUTO,
    joint: Optional[bool] = None,
    target_abs_err: float = DEFAULT_TARGET_ABS_ERR,
    rng_seed: int = 0,
) -> PropensityVector:
    """
    Propensity vector through the natural route for the belief kind.

    Normal beliefs with a joint covariance use the joint route unless
    `joint=False`; integer Beta beliefs use `beta_propensities(route)`; real
    Beta parameters fall back to quadrature.
    """
    kind = belief_set.kind
    if kind is BeliefKind.BETA:
        if belief_set.is_integer:
            return beta_propensities(belief_set, route)
        return quadrature_propensities(belief_set)
    if kind is BeliefKind.LOGNORMAL:
        return lognormal_propensities(belief_set, target_abs_err, rng_seed)
    use_joint = belief_set.joint_cov is not None if joint is None else joint
    return gaussian_propensities(belief_set, use_joint, target_abs_err, rng_seed)
