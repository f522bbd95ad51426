"""Thompson-sampling target policy and softmax logging policy."""
from concurrent.futures import ThreadPoolExecutor
from typing import TYPE_CHECKING, Callable, List, Optional, Tuple

import numpy as np
from scipy.special import softmax

from tsprop.core.oracle import argmax_random_ties
from tsprop.core.propensity import (
    PropensityMethod,
    PropensityVector,
    gaussian_propensities,
    gaussian_propensity,
    gaussian_propensity_joint,
    grid_propensities,
    grid_target_propensities,
)
from tsprop.exceptions import DomainError
from tsprop.models.base import BasePolicy
from tsprop.models.beliefs import BeliefSet, RewardBelief
from tsprop.models.blr import BayesLogReg
from tsprop.utils.logger import get_logger
from tsprop.utils.seeding import child_rng, content_seed
from tsprop.utils.validators import check_array, check_positive_int, check_real

if TYPE_CHECKING:
    from tsprop.sim.environment import Environment

logger = get_logger(__name__)

PROPENSITY_ENGINES = ("quadrature", "mvn", "joint")
# Keeps the beliefs of x = 0 valid Normals; that context is resolved exactly beforehand.
TS_VARIANCE_FLOOR = 1e-300
CONTEXT_CHUNK = 1024


def _as_contexts(contexts: np.ndarray, d: int) -> np.ndarray:
    X = check_array(np.atleast_2d(contexts), "contexts", expected_dim=2)
    if X.shape[1] != d:
        raise DomainError(f"Contexts must have {d} features, got {X.shape[1]}.")
    return X


def ts_score_moments(
    model: BayesLogReg, contexts: np.ndarray, floor: bool = True
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Means w_aᵀx and variances Σ_k x_k² / precision_{a,k} of the linear scores.

    Elementwise products and sums over the feature axis, so a row's result
    never depends on the rest of the batch.
    """
    X = _as_contexts(contexts, model.d)
    means = np.sum(X[:, None, :] * model.means[None, :, :], axis=2)
    variances = np.sum(X[:, None, :] ** 2 / model.precisions[None, :, :], axis=2)
    return means, (np.maximum(variances, TS_VARIANCE_FLOOR) if floor else variances)


def ts_beliefs(model: BayesLogReg, x: np.ndarray) -> BeliefSet:
    """
    Normal beliefs over each action's linear score for context x.

    The actions share no weights, so the joint covariance is diagonal.
    """
    x = check_array(x, "x", expected_dim=1)
    means, variances = ts_score_moments(model, x[None, :])
    beliefs = tuple(RewardBelief.normal(float(m), float(v)) for m, v in zip(means[0], variances[0]))
    return BeliefSet(beliefs, np.diag(variances[0]))


def _run_blocks(fn: Callable[[np.ndarray], np.ndarray], m: int, jobs: int) -> np.ndarray:
    """Apply fn to contiguous row blocks, concatenated in order."""
    jobs = check_positive_int(jobs, "jobs")
    blocks = [b for b in np.array_split(np.arange(m), jobs) if b.size]
    if len(blocks) <= 1:
        return fn(np.arange(m))
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        parts: List[np.ndarray] = list(pool.map(fn, blocks))
    return np.concatenate(parts, axis=0)


def _deterministic_probs(means: np.ndarray) -> np.ndarray:
    """Scores without variance: uniform over the actions with the largest mean."""
    is_max = means == means.max()
    return is_max / is_max.sum()


def sample_categorical(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF draws: probs (m, n), uniforms u (m, k) → indices (m, k)."""
    cdf = np.cumsum(probs, axis=1)
    idx = np.sum(cdf[:, None, :] < u[:, :, None], axis=2)
    return np.minimum(idx, probs.shape[1] - 1)


class ThompsonSamplingPolicy(BasePolicy):
    """
    TS over a fitted BayesLogReg.

    Args:
        model: fitted per-action posterior.
        engine: "joint" (MVN CDF on the joint covariance), "mvn" (MVN CDF on
            the marginals) or "quadrature" (trapezoid rule, deterministic).
        target_abs_err: accuracy of the MVN engines.
        rng_seed: master seed of the MVN engines; each context gets a sub-seed
            keyed by its values.
    """

    def __init__(
        self,
        model: BayesLogReg,
        engine: str = "joint",
        target_abs_err: float = 1e-5,
        rng_seed: int = 0,
    ):
        super().__init__(model.n)
        if engine not in PROPENSITY_ENGINES:
            raise DomainError(
                f"Unknown propensity engine '{engine}'; expected one of {', '.join(PROPENSITY_ENGINES)}."
            )
        self.model = model
        self.engine = engine
        self.target_abs_err = check_real(
            target_abs_err, "target_abs_err", min_val=0.0, max_val=0.1, include_boundaries="right"
        )
        self.rng_seed = rng_seed

    def with_engine(self, engine: str) -> "ThompsonSamplingPolicy":
        return ThompsonSamplingPolicy(self.model, engine, self.target_abs_err, self.rng_seed)

    def beliefs(self, x: np.ndarray) -> BeliefSet:
        return ts_beliefs(self.model, x)

    def _seed(self, x: np.ndarray) -> int:
        return content_seed(self.rng_seed, "ts-context", x)

    def _fixed_scores(self, x: np.ndarray) -> Optional[np.ndarray]:
        """Score means when every score variance is exactly zero (x = 0), else None."""
        means, variances = ts_score_moments(self.model, x[None, :], floor=False)
        return means[0] if not np.any(variances) else None

    def propensity_vector(self, x: np.ndarray) -> PropensityVector:
        x = check_array(x, "x", expected_dim=1)
        fixed = self._fixed_scores(x)
        if fixed is not None:
            method = {
                "quadrature": PropensityMethod.QUADRATURE,
                "mvn": PropensityMethod.GAUSSIAN_MVN,
                "joint": PropensityMethod.GAUSSIAN_JOINT,
            }[self.engine]
            return PropensityVector(_deterministic_probs(fixed), method)
        beliefs = self.beliefs(x)
        if self.engine == "quadrature":
            return grid_propensities(beliefs.marginal())
        return gaussian_propensities(
            beliefs if self.engine == "joint" else beliefs.marginal(),
            joint=self.engine == "joint",
            target_abs_err=self.target_abs_err,
            rng_seed=self._seed(x),
        )

    def _single(self, x: np.ndarray, action: int) -> float:
        fixed = self._fixed_scores(x)
        if fixed is not None:
            return float(_deterministic_probs(fixed)[action])
        beliefs = self.beliefs(x)
        if self.engine == "joint":
            est = gaussian_propensity_joint(beliefs, action, self.target_abs_err, self._seed(x))
        else:
            est = gaussian_propensity(beliefs.marginal(), action, self.target_abs_err, self._seed(x))
        return est.value

    def action_probs(self, contexts: np.ndarray, jobs: int = 1) -> np.ndarray:
        X = _as_contexts(contexts, self.model.d)
        n = self.n_actions

        def block(rows: np.ndarray) -> np.ndarray:
            if self.engine == "quadrature":
                means, variances = ts_score_moments(self.model, X[rows], floor=False)
                values, _ = grid_target_propensities(
                    np.repeat(means, n, axis=0),
                    np.repeat(np.maximum(variances, TS_VARIANCE_FLOOR), n, axis=0),
                    np.tile(np.arange(n), rows.size),
                )
                values = values.reshape(rows.size, n)
                for r in np.flatnonzero(~np.any(variances, axis=1)):
                    values[r] = _deterministic_probs(means[r])
                return values
            return np.array([self.propensity_vector(X[i]).probs for i in rows]).reshape(rows.size, n)

        return _run_blocks(block, X.shape[0], jobs)

    def propensities_of(self, contexts: np.ndarray, actions: np.ndarray, jobs: int = 1) -> np.ndarray:
        X = _as_contexts(contexts, self.model.d)
        actions = np.asarray(actions, dtype=int).reshape(-1)
        if actions.shape[0] != X.shape[0]:
            raise DomainError(f"{actions.shape[0]} actions for {X.shape[0]} contexts.")
        if np.any((actions < 0) | (actions >= self.n_actions)):
            raise DomainError(f"Actions must lie in [0, {self.n_actions}).")

        def block(rows: np.ndarray) -> np.ndarray:
            if self.engine == "quadrature":
                means, variances = ts_score_moments(self.model, X[rows], floor=False)
                values = grid_target_propensities(
                    means, np.maximum(variances, TS_VARIANCE_FLOOR), actions[rows]
                )[0]
                for r in np.flatnonzero(~np.any(variances, axis=1)):
                    values[r] = _deterministic_probs(means[r])[actions[rows][r]]
                return values
            return np.array([self._single(X[i], int(actions[i])) for i in rows])

        return _run_blocks(block, X.shape[0], jobs)

    def sample_actions(self, contexts: np.ndarray, draws: int, rng_seed: int) -> np.ndarray:
        """Posterior draws of every score, argmax per draw; chunked by context with sub-seeds."""
        X = _as_contexts(contexts, self.model.d)
        draws = check_positive_int(draws, "draws")
        out = np.empty((X.shape[0], draws), dtype=np.int64)
        for c, start in enumerate(range(0, X.shape[0], CONTEXT_CHUNK)):
            stop = min(start + CONTEXT_CHUNK, X.shape[0])
            means, variances = ts_score_moments(self.model, X[start:stop])
            rng = child_rng(rng_seed, c)
            z = rng.standard_normal((stop - start, draws, self.n_actions))
            scores = means[:, None, :] + np.sqrt(variances)[:, None, :] * z
            out[start:stop] = argmax_random_ties(scores, rng)
        return out


class SoftmaxLoggingPolicy(BasePolicy):
    """π_0(a|x) = softmax(temperature · true_q(x, ·))."""

    def __init__(self, environment: "Environment", temperature: float):
        super().__init__(environment.n)
        self.environment = environment
        self.temperature = check_real(temperature, "temperature")

    def action_probs(self, contexts: np.ndarray, jobs: int = 1) -> np.ndarray:
        return softmax(self.temperature * self.environment.true_q(contexts), axis=1)

    def sample_actions(self, contexts: np.ndarray, draws: int, rng_seed: int) -> np.ndarray:
        draws = check_positive_int(draws, "draws")
        probs = self.action_probs(contexts)
        u = child_rng(rng_seed, 0).random((probs.shape[0], draws))
        return sample_categorical(probs, u)
