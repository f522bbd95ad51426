from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError
from scipy import stats

from tsprop.exceptions import DegenerateVarianceError, DomainError, InputError, MatrixError
from tsprop.utils.logger import get_logger
from tsprop.utils.validators import check_array, check_psd, check_real, check_symmetric

logger = get_logger(__name__)

JOINT_DIAG_TOL = 1e-12
PSD_CLIP_TOL = 1e-8


class BeliefKind(str, Enum):
    NORMAL = "normal"
    LOGNORMAL = "lognormal"
    BETA = "beta"


@dataclass(frozen=True)
class RewardBelief:
    """
    Posterior belief over one action's reward.

    Normal / Lognormal beliefs carry (mu, sigma2); for Lognormal these are the
    parameters of the underlying normal. Beta beliefs carry (alpha, beta).
    """
    kind: BeliefKind
    mu: Optional[float] = None
    sigma2: Optional[float] = None
    alpha: Optional[float] = None
    beta: Optional[float] = None

    def __post_init__(self):
        kind = BeliefKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind is BeliefKind.BETA:
            alpha = check_real(self.alpha, "alpha")
            beta = check_real(self.beta, "beta")
            if alpha <= 0 or beta <= 0:
                raise DomainError(f"Beta parameters must be positive, got ({alpha}, {beta}).")
            object.__setattr__(self, "alpha", alpha)
            object.__setattr__(self, "beta", beta)
        else:
            mu = check_real(self.mu, "mu")
            sigma2 = check_real(self.sigma2, "sigma2")
            if sigma2 <= 0:
                raise DomainError(f"`sigma2` must be positive, got {sigma2}.")
            object.__setattr__(self, "mu", mu)
            object.__setattr__(self, "sigma2", sigma2)

    @classmethod
    def normal(cls, mu: float, sigma2: float) -> "RewardBelief":
        return cls(BeliefKind.NORMAL, mu=mu, sigma2=sigma2)

    @classmethod
    def lognormal(cls, mu: float, sigma2: float) -> "RewardBelief":
        return cls(BeliefKind.LOGNORMAL, mu=mu, sigma2=sigma2)

    @classmethod
    def beta_dist(cls, alpha: float, beta: float) -> "RewardBelief":
        return cls(BeliefKind.BETA, alpha=alpha, beta=beta)

    @property
    def is_integer(self) -> bool:
        """True for Beta beliefs whose parameters are integers ≥ 1."""
        if self.kind is not BeliefKind.BETA:
            return False
        return (
            float(self.alpha).is_integer() and float(self.beta).is_integer()
            and self.alpha >= 1 and self.beta >= 1
        )

    @property
    def params(self) -> Tuple[float, float]:
        if self.kind is BeliefKind.BETA:
            return (self.alpha, self.beta)
        return (self.mu, self.sigma2)

    def distribution(self):
        """Frozen scipy.stats distribution of the reward."""
        if self.kind is BeliefKind.NORMAL:
            return stats.norm(loc=self.mu, scale=np.sqrt(self.sigma2))
        if self.kind is BeliefKind.LOGNORMAL:
            return stats.lognorm(s=np.sqrt(self.sigma2), scale=np.exp(self.mu))
        return stats.beta(self.alpha, self.beta)

    def mean(self) -> float:
        if self.kind is BeliefKind.NORMAL:
            return self.mu
        if self.kind is BeliefKind.LOGNORMAL:
            return float(np.exp(self.mu + self.sigma2 / 2.0))
        return self.alpha / (self.alpha + self.beta)

    def variance(self) -> float:
        if self.kind is BeliefKind.NORMAL:
            return self.sigma2
        if self.kind is BeliefKind.LOGNORMAL:
            return float(np.expm1(self.sigma2) * np.exp(2.0 * self.mu + self.sigma2))
        s = self.alpha + self.beta
        return self.alpha * self.beta / (s * s * (s + 1.0))


@dataclass(frozen=True)
class BeliefSet:
    """Ordered beliefs over an action space, optionally with a joint Gaussian covariance."""
    beliefs: Tuple[RewardBelief, ...]
    joint_cov: Optional[np.ndarray] = field(default=None, compare=False)

    def __post_init__(self):
        beliefs = tuple(self.beliefs)
        object.__setattr__(self, "beliefs", beliefs)
        if len(beliefs) < 2:
            raise DomainError(f"A BeliefSet needs at least 2 actions, got {len(beliefs)}.")
        kinds = {b.kind for b in beliefs}
        if len(kinds) != 1:
            raise DomainError(f"All beliefs must share one kind, got {sorted(k.value for k in kinds)}.")

        if self.joint_cov is not None:
            if self.kind is not BeliefKind.NORMAL:
                raise DomainError("joint_cov is only supported for normal beliefs.")
            cov = check_array(self.joint_cov, "joint_cov", expected_dim=2).copy()
            if cov.shape != (self.n, self.n):
                raise DomainError(
                    f"joint_cov must have shape ({self.n}, {self.n}), got {cov.shape}."
                )
            check_symmetric(cov, "joint_cov")
            check_psd(cov, "joint_cov", rel_tol=PSD_CLIP_TOL)
            if not np.allclose(np.diag(cov), self.sigma2, rtol=0.0, atol=JOINT_DIAG_TOL):
                raise DomainError("joint_cov diagonal must equal each belief's sigma2.")
            cov.setflags(write=False)
            object.__setattr__(self, "joint_cov", cov)

    @classmethod
    def from_params(
        cls,
        kind,
        params: Sequence[Sequence[float]],
        joint_cov: Optional[Sequence[Sequence[float]]] = None,
    ) -> "BeliefSet":
        kind = BeliefKind(kind)
        if kind is BeliefKind.BETA:
            beliefs = [RewardBelief.beta_dist(a, b) for a, b in params]
        else:
            beliefs = [RewardBelief(kind, mu=m, sigma2=s) for m, s in params]
        cov = None if joint_cov is None else np.asarray(joint_cov, dtype=float)
        return cls(tuple(beliefs), cov)

    @property
    def n(self) -> int:
        return len(self.beliefs)

    @property
    def kind(self) -> BeliefKind:
        return self.beliefs[0].kind

    @property
    def mu(self) -> np.ndarray:
        return np.array([b.mu for b in self.beliefs], dtype=float)

    @property
    def sigma2(self) -> np.ndarray:
        return np.array([b.sigma2 for b in self.beliefs], dtype=float)

    @property
    def alpha(self) -> np.ndarray:
        return np.array([b.alpha for b in self.beliefs], dtype=float)

    @property
    def beta(self) -> np.ndarray:
        return np.array([b.beta for b in self.beliefs], dtype=float)

    @property
    def is_integer(self) -> bool:
        return all(b.is_integer for b in self.beliefs)

    def marginal(self) -> "BeliefSet":
        """Same beliefs without the joint covariance."""
        return BeliefSet(self.beliefs)

    def swapped(self) -> "BeliefSet":
        """Beta(α, β) → Beta(β, α) for every action: the law of 1 − p."""
        if self.kind is not BeliefKind.BETA:
            raise DomainError("swapped() is only defined for beta beliefs.")
        return BeliefSet(tuple(RewardBelief.beta_dist(b.beta, b.alpha) for b in self.beliefs))

    def as_normal(self) -> "BeliefSet":
        """Lognormal beliefs re-read as the normal beliefs of their logarithm."""
        if self.kind is BeliefKind.NORMAL:
            return self
        if self.kind is not BeliefKind.LOGNORMAL:
            raise DomainError("as_normal() requires normal or lognormal beliefs.")
        return BeliefSet(tuple(RewardBelief.normal(b.mu, b.sigma2) for b in self.beliefs))

    def to_model(self) -> "BeliefSetModel":
        return BeliefSetModel(
            kind=self.kind.value,
            params=[list(b.params) for b in self.beliefs],
            joint_cov=None if self.joint_cov is None else self.joint_cov.tolist(),
        )

    def to_json(self) -> str:
        return self.to_model().model_dump_json(exclude_none=True)

    @classmethod
    def from_json(cls, payload: str) -> "BeliefSet":
        """Parse the {"kind", "params", "joint_cov"} wire format."""
        try:
            model = BeliefSetModel.model_validate_json(payload)
        except ValidationError as e:
            raise InputError(f"Invalid BeliefSet JSON: {e}") from e
        return model.to_belief_set()


class BeliefSetModel(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["normal", "lognormal", "beta"]
    params: List[Tuple[float, float]]
    joint_cov: Optional[List[List[float]]] = None

    def to_belief_set(self) -> BeliefSet:
        return BeliefSet.from_params(self.kind, self.params, self.joint_cov)


@dataclass(frozen=True)
class LinearGaussianPosterior:
    """N(mean, cov) over a weight vector plus one feature vector per action."""
    mean: np.ndarray
    cov: np.ndarray
    features: np.ndarray

    def __post_init__(self):
        mean = check_array(self.mean, "mean", expected_dim=1).copy()
        cov = check_array(self.cov, "cov", expected_dim=2).copy()
        features = check_array(self.features, "features", expected_dim=2).copy()
        d = mean.shape[0]
        if cov.shape != (d, d):
            raise DomainError(f"cov must have shape ({d}, {d}), got {cov.shape}.")
        if features.shape[1] != d:
            raise DomainError(f"Feature vectors must have length {d}, got {features.shape[1]}.")
        if features.shape[0] < 2:
            raise DomainError("A posterior needs feature vectors for at least 2 actions.")
        check_symmetric(cov, "cov", atol=1e-10)
        for name, arr in (("mean", mean), ("cov", cov), ("features", features)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def d(self) -> int:
        return self.mean.shape[0]

    @property
    def n(self) -> int:
        return self.features.shape[0]


def psd_factor(cov: np.ndarray) -> np.ndarray:
    """
    Symmetric factor A with A Aᵀ = cov.

    Eigenvalues in [−1e-8·trace, 0) are clipped to zero so rank-deficient
    covariances (duplicate features) factor cleanly.
    """
    eigvals, eigvecs = np.linalg.eigh(cov)
    trace = max(float(np.trace(cov)), np.finfo(float).tiny)
    if eigvals.min() < -PSD_CLIP_TOL * trace:
        raise MatrixError(
            f"Covariance is not positive semidefinite (smallest eigenvalue {eigvals.min():.3e})."
        )
    return eigvecs * np.sqrt(np.clip(eigvals, 0.0, None))


def sample_rewards(belief_set: BeliefSet, rng_seed: int, size: Optional[int] = None) -> np.ndarray:
    """
    Draw rewards for every action.

    Returns shape (n,) for a single draw, (size, n) otherwise. With a joint
    covariance the draws come from the joint Gaussian, else each action is
    sampled independently. Deterministic given `rng_seed`.
    """
    rng = np.random.default_rng(rng_seed)
    shape = (belief_set.n,) if size is None else (int(size), belief_set.n)

    if belief_set.joint_cov is not None:
        factor = psd_factor(belief_set.joint_cov)
        z = rng.standard_normal(shape)
        return belief_set.mu + z @ factor.T

    kind = belief_set.kind
    if kind is BeliefKind.BETA:
        return rng.beta(belief_set.alpha, belief_set.beta, size=shape)
    draws = belief_set.mu + np.sqrt(belief_set.sigma2) * rng.standard_normal(shape)
    if kind is BeliefKind.LOGNORMAL:
        return np.exp(draws)
    return draws


def posterior_to_outcome(post: LinearGaussianPosterior) -> BeliefSet:
    """
    Map a Gaussian weight posterior to the induced Gaussian over action scores.

    Per action: mean μ_θᵀf_a, variance f_aᵀΣ_θf_a; joint_cov holds every
    f_aᵀΣ_θf_b since one shared weight draw scores all actions.
    """
    features = post.features
    means = features @ post.mean
    joint = features @ post.cov @ features.T
    joint = 0.5 * (joint + joint.T)
    variances = np.diag(joint).copy()
    if np.any(variances <= 0):
        bad = np.flatnonzero(variances <= 0).tolist()
        raise DegenerateVarianceError(f"Outcome variance is not positive for actions {bad}.")
    beliefs = tuple(RewardBelief.normal(float(m), float(v)) for m, v in zip(means, variances))
    logger.debug("Mapped posterior (d=%d) to %d outcome beliefs", post.d, post.n)
    return BeliefSet(beliefs, joint)


def load_belief_set(path: str) -> BeliefSet:
    """Read a BeliefSet JSON file."""
    try:
        with open(path, "r") as f:
            payload = f.read()
    except OSError as e:
        raise InputError(f"Cannot read belief file '{path}': {e}") from e
    try:
        json.loads(payload)
    except json.JSONDecodeError as e:
        raise InputError(f"Malformed JSON in '{path}': {e}") from e
    return BeliefSet.from_json(payload)
