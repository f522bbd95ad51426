"""
Per-action Bayesian logistic regression with a diagonal Laplace posterior.

Each action a has its own weight vector w_a with prior N(0, prior_var·I),
fitted on the records that logged a. The MAP minimises the penalised negative
log-likelihood with scipy's trust-region Newton method (exact Hessian). The
posterior precision of weight k is 1/prior_var + Σ p̂(1 − p̂)·x_k² at the MAP.
"""
from dataclasses import dataclass
from typing import List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError
from scipy.optimize import minimize, root
from scipy.special import expit

from tsprop.exceptions import DomainError, FitError, InputError
from tsprop.ope.dataset import LoggedDataset
from tsprop.utils.logger import get_logger
from tsprop.utils.validators import check_array, check_positive_int, check_real

logger = get_logger(__name__)

BLR_GRAD_TOL = 1e-8
BLR_MAX_ITER = 500
BLR_ROOT_XTOL = 1e-13
# scipy trust-region status: predicted decrease lost in rounding.
TRUST_REGION_PRECISION_LOSS = 2


class BlrCheckpoint(BaseModel):
    model_config = ConfigDict(extra="forbid")

    prior_var: float = Field(gt=0.0)
    means: List[List[float]]
    precisions: List[List[float]]


@dataclass(frozen=True)
class BayesLogReg:
    """
    Fitted model.

    Attributes:
        means: (n, d) posterior means of the per-action weights.
        precisions: (n, d) diagonal posterior precisions, all > 0.
        prior_var: prior variance of every weight.
    """
    means: np.ndarray
    precisions: np.ndarray
    prior_var: float = 1e3

    def __post_init__(self):
        means = check_array(self.means, "means", expected_dim=2).copy()
        precisions = check_array(self.precisions, "precisions", expected_dim=2).copy()
        if means.shape != precisions.shape:
            raise DomainError(
                f"means {means.shape} and precisions {precisions.shape} must have the same shape."
            )
        if np.any(precisions <= 0):
            raise DomainError("Posterior precisions must be positive.")
        prior_var = check_real(self.prior_var, "prior_var", min_val=0.0, include_boundaries="neither")
        means.setflags(write=False)
        precisions.setflags(write=False)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "precisions", precisions)
        object.__setattr__(self, "prior_var", prior_var)

    @property
    def n(self) -> int:
        return self.means.shape[0]

    @property
    def d(self) -> int:
        return self.means.shape[1]

    @classmethod
    def prior(cls, n: int, d: int, prior_var: float = 1e3) -> "BayesLogReg":
        return cls(np.zeros((n, d)), np.full((n, d), 1.0 / prior_var), prior_var)

    def to_json(self) -> str:
        return BlrCheckpoint(
            prior_var=self.prior_var,
            means=self.means.tolist(),
            precisions=self.precisions.tolist(),
        ).model_dump_json()

    @classmethod
    def from_json(cls, payload: str) -> "BayesLogReg":
        try:
            ckpt = BlrCheckpoint.model_validate_json(payload)
        except ValidationError as e:
            raise InputError(f"Invalid model checkpoint: {e}") from e
        return cls(np.array(ckpt.means), np.array(ckpt.precisions), ckpt.prior_var)

    def save(self, path: str) -> None:
        with open(path, "w") as f:
            f.write(self.to_json())

    @classmethod
    def load(cls, path: str) -> "BayesLogReg":
        try:
            with open(path, "r") as f:
                payload = f.read()
        except OSError as e:
            raise InputError(f"Cannot read model checkpoint '{path}': {e}") from e
        return cls.from_json(payload)


def _objective(w: np.ndarray, X: np.ndarray, y: np.ndarray, prior_prec: float) -> float:
    z = X @ w
    return float(np.sum(np.logaddexp(0.0, z) - y * z) + 0.5 * prior_prec * np.dot(w, w))


def _gradient(w: np.ndarray, X: np.ndarray, y: np.ndarray, prior_prec: float) -> np.ndarray:
    return X.T @ (expit(X @ w) - y) + prior_prec * w


def _hessian(w: np.ndarray, X: np.ndarray, y: np.ndarray, prior_prec: float) -> np.ndarray:
    p = expit(X @ w)
    return (X.T * (p * (1.0 - p))) @ X + prior_prec * np.eye(X.shape[1])


def _map_weights(X: np.ndarray, y: np.ndarray, prior_var: float, action: int) -> np.ndarray:
    """
    MAP weights for one action; raises FitError unless the gradient max-norm reaches 1e-8.

    When the objective can no longer resolve the model's predicted decrease, the
    trust-region run stops early; the stationarity equation is then solved
    directly from its last iterate.
    """
    prior_prec = 1.0 / prior_var
    args = (X, y, prior_prec)
    result = minimize(
        _objective,
        np.zeros(X.shape[1]),
        args=args,
        jac=_gradient,
        hess=_hessian,
        method="trust-exact",
        options={"gtol": BLR_GRAD_TOL, "maxiter": BLR_MAX_ITER},
    )
    w = np.asarray(result.x)
    message = str(result.message)
    if not result.success and result.status == TRUST_REGION_PRECISION_LOSS:
        polished = root(
            _gradient, w, args=args, jac=_hessian, method="hybr", options={"xtol": BLR_ROOT_XTOL}
        )
        if np.all(np.isfinite(polished.x)):
            w = np.asarray(polished.x)
        message = f"{message}; polish: {polished.message}"

    grad_norm = float(np.max(np.abs(_gradient(w, *args))))
    if not (result.success or grad_norm <= BLR_GRAD_TOL):
        raise FitError(
            f"MAP optimisation did not converge for action {action}: {message} "
            f"(gradient max-norm {grad_norm:.3e} after {result.nit} iterations).",
            best_weights=w,
            diagnostics={
                "action": action,
                "iterations": int(result.nit),
                "grad_norm": grad_norm,
                "message": message,
            },
        )
    logger.debug("action %d: MAP in %d iterations, gradient %.3e", action, result.nit, grad_norm)
    return w


def fit_blr(data: LoggedDataset, prior_var: float = 1e3, n_actions: Optional[int] = None) -> BayesLogReg:
    """
    Fit one logistic regression per action on the records that logged it.

    Args:
        data: logged dataset with rewards in [0, 1].
        prior_var: prior variance of every weight.
        n_actions: size of the action space; defaults to max logged action + 1.
            Actions without records keep the prior.

    Raises:
        DomainError: rewards outside [0, 1] or actions outside the action space.
        FitError: the MAP optimisation failed for some action.
    """
    prior_var = check_real(prior_var, "prior_var", min_val=0.0, include_boundaries="neither")
    if n_actions is None:
        n_actions = int(np.max(data.actions)) + 1
    n_actions = check_positive_int(n_actions, "n_actions", min_val=2)
    if np.any(data.actions >= n_actions):
        raise DomainError(f"Logged actions exceed the action space of size {n_actions}.")
    if np.any((data.rewards < 0) | (data.rewards > 1)):
        raise DomainError("Logistic regression needs rewards in [0, 1].")

    d = data.d
    means = np.zeros((n_actions, d))
    precisions = np.full((n_actions, d), 1.0 / prior_var)
    for a in range(n_actions):
        mask = data.actions == a
        if not np.any(mask):
            logger.info("action %d has no records; keeping the prior", a)
            continue
        X = data.contexts[mask]
        y = data.rewards[mask]
        w = _map_weights(X, y, prior_var, a)
        p = expit(X @ w)
        means[a] = w
        precisions[a] += (p * (1.0 - p)) @ (X * X)

    logger.info("Fitted BLR on %d records (n=%d, d=%d)", len(data), n_actions, d)
    return BayesLogReg(means, precisions, prior_var)
