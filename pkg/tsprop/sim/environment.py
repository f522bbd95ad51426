"""
Synthetic contextual bandit.

Contexts are standard normal in d dimensions. Each action has an embedding
e_a ~ N(0, I) and a bias b_a ~ N(−0.5, 0.5²), drawn once from env_seed; the
click probability is true_q(x, a) = logistic(x·e_a / √d + b_a).
"""
import hashlib
import json
from dataclasses import dataclass
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.special import expit

from tsprop.exceptions import DomainError
from tsprop.models.base import BasePolicy
from tsprop.models.policy import SoftmaxLoggingPolicy, sample_categorical
from tsprop.ope.dataset import LoggedDataset
from tsprop.utils.logger import get_logger
from tsprop.utils.seeding import child_rng, derive_seed
from tsprop.utils.validators import check_array, check_positive_int

logger = get_logger(__name__)

BIAS_MEAN = -0.5
BIAS_SD = 0.5
TRUTH_CONTEXT_CHUNK = 4096


class EnvConfig(BaseModel):
    """Environment and experiment settings; unknown keys are rejected."""
    model_config = ConfigDict(extra="forbid")

    d: int = Field(default=10, ge=1)
    n: int = Field(default=10, ge=2)
    logger_temp: float = -1.5
    prior_var: float = Field(default=1e3, gt=0.0)
    env_seed: int = 0
    reward_noise: bool = True
    train_size: int = Field(default=2048, ge=1)
    truth_contexts: int = Field(default=100000, ge=1)
    truth_draws: int = Field(default=100, ge=1)
    propensity_engine: Literal["quadrature", "mvn", "joint"] = "joint"
    target_abs_err: float = Field(default=1e-5, gt=0.0, le=0.1)

    def config_hash(self) -> str:
        """sha256 of the canonical JSON dump."""
        payload = json.dumps(self.model_dump(), sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()


@dataclass(frozen=True)
class Environment:
    action_embeddings: np.ndarray
    biases: np.ndarray

    def __post_init__(self):
        emb = check_array(self.action_embeddings, "action_embeddings", expected_dim=2).copy()
        biases = check_array(self.biases, "biases", expected_dim=1).copy()
        if biases.shape[0] != emb.shape[0]:
            raise DomainError("One bias per action embedding is required.")
        emb.setflags(write=False)
        biases.setflags(write=False)
        object.__setattr__(self, "action_embeddings", emb)
        object.__setattr__(self, "biases", biases)

    @classmethod
    def from_config(cls, cfg: EnvConfig) -> "Environment":
        rng = child_rng(derive_seed(cfg.env_seed, "environment"))
        embeddings = rng.standard_normal((cfg.n, cfg.d))
        biases = rng.normal(BIAS_MEAN, BIAS_SD, size=cfg.n)
        return cls(embeddings, biases)

    @property
    def n(self) -> int:
        return self.action_embeddings.shape[0]

    @property
    def d(self) -> int:
        return self.action_embeddings.shape[1]

    def sample_contexts(self, size: int, rng: np.random.Generator) -> np.ndarray:
        return rng.standard_normal((size, self.d))

    def true_q(self, contexts: np.ndarray) -> np.ndarray:
        """(m, n) click probabilities; elementwise, so each row replays exactly."""
        X = np.atleast_2d(np.asarray(contexts, dtype=float))
        scores = np.sum(X[:, None, :] * self.action_embeddings[None, :, :], axis=2)
        return expit(scores / np.sqrt(self.d) + self.biases)


def logging_policy(env: Environment, cfg: EnvConfig) -> SoftmaxLoggingPolicy:
    return SoftmaxLoggingPolicy(env, cfg.logger_temp)


def generate_log(env: Environment, cfg: EnvConfig, size: int, rng_seed: int) -> LoggedDataset:
    """
    Draw `size` records under the softmax logging policy.

    Rewards are Bernoulli(true_q) when cfg.reward_noise is set and the
    click probability itself otherwise. The stored p0 is the exact softmax
    propensity of the logged action.
    """
    size = check_positive_int(size, "size")
    rng = child_rng(derive_seed(rng_seed, "generate-log"))
    contexts = env.sample_contexts(size, rng)
    q = env.true_q(contexts)
    probs = logging_policy(env, cfg).action_probs(contexts)
    actions = sample_categorical(probs, rng.random((size, 1)))[:, 0]
    rows = np.arange(size)
    q_logged = q[rows, actions]
    if cfg.reward_noise:
        rewards = (rng.random(size) < q_logged).astype(float)
    else:
        rewards = q_logged
    logger.debug("Generated %d records (seed=%d)", size, rng_seed)
    return LoggedDataset(contexts, actions, rewards, probs[rows, actions])


@dataclass(frozen=True)
class GroundTruth:
    """
    Policy value over a fixed set of contexts.

    exact_value averages Σ_a π(a|x)·true_q(x, a); mc_value averages true_q at
    `draws` sampled actions per context. diff_std_err is the standard error of
    their per-context difference.
    """
    mc_value: float
    exact_value: float
    mc_std_err: float
    exact_std_err: float
    diff_std_err: float
    n_contexts: int
    draws: int

    def to_dict(self) -> dict:
        return {
            "mc_value": self.mc_value,
            "exact_value": self.exact_value,
            "mc_std_err": self.mc_std_err,
            "exact_std_err": self.exact_std_err,
            "diff_std_err": self.diff_std_err,
            "n_contexts": self.n_contexts,
            "draws": self.draws,
        }


def _std_err(values: np.ndarray) -> float:
    if values.shape[0] < 2:
        return 0.0
    return float(np.std(values, ddof=1)) / np.sqrt(values.shape[0])


def true_value(
    env: Environment,
    policy: BasePolicy,
    n_contexts: int,
    rng_seed: int,
    draws: int = 100,
    jobs: int = 1,
    contexts: Optional[np.ndarray] = None,
) -> GroundTruth:
    """
    Value of `policy` in `env`, analytically and by Monte Carlo on the same contexts.

    Args:
        env: environment.
        policy: any policy with action_probs and sample_actions.
        n_contexts: contexts drawn from the context distribution.
        rng_seed: seed for contexts and action draws.
        draws: sampled actions per context for mc_value.
        jobs: worker threads for the analytic propensities.
        contexts: explicit contexts, overriding n_contexts.
    """
    if contexts is None:
        n_contexts = check_positive_int(n_contexts, "n_contexts")
        contexts = env.sample_contexts(n_contexts, child_rng(derive_seed(rng_seed, "truth-contexts")))
    draws = check_positive_int(draws, "draws")
    m = contexts.shape[0]

    q = env.true_q(contexts)
    exact_per_context = np.sum(policy.action_probs(contexts, jobs=jobs) * q, axis=1)

    mc_per_context = np.empty(m)
    sample_seed = derive_seed(rng_seed, "truth-actions")
    for c, start in enumerate(range(0, m, TRUTH_CONTEXT_CHUNK)):
        stop = min(start + TRUTH_CONTEXT_CHUNK, m)
        actions = policy.sample_actions(contexts[start:stop], draws, derive_seed(sample_seed, "chunk", c))
        mc_per_context[start:stop] = np.mean(
            np.take_along_axis(q[start:stop], actions, axis=1), axis=1
        )

    truth = GroundTruth(
        mc_value=float(np.mean(mc_per_context)),
        exact_value=float(np.mean(exact_per_context)),
        mc_std_err=_std_err(mc_per_context),
        exact_std_err=_std_err(exact_per_context),
        diff_std_err=_std_err(mc_per_context - exact_per_context),
        n_contexts=m,
        draws=draws,
    )
    logger.info(
        "Ground truth over %d contexts: exact=%.6f mc=%.6f (diff se %.2e)",
        m, truth.exact_value, truth.mc_value, truth.diff_std_err,
    )
    return truth
