"""
Inverse-propensity off-policy estimators.

All three estimators reweight logged rewards by w = π_t(a|x) / π_0(a|x):

- Ips: mean of w·r.
- Snips: Σ w·r / Σ w.
- BetaIps: mean of w·(r − β) + β, with the constant baseline β chosen to
  minimise the sample variance of the corrected terms.
"""
from abc import ABC, abstractmethod
from dataclasses import dataclass
from enum import Enum
from typing import ClassVar, Dict, Optional, Tuple

import numpy as np
from scipy.stats import norm

from tsprop.exceptions import DegenerateWeightsError, DomainError
from tsprop.ope.dataset import LoggedDataset
from tsprop.utils.logger import get_logger
from tsprop.utils.seeding import child_rng
from tsprop.utils.validators import check_array, check_positive_int, check_real

logger = get_logger(__name__)

CI_LEVEL = 0.99
Z_CI = float(norm.ppf(0.5 + CI_LEVEL / 2.0))
DEFAULT_BOOTSTRAP_RESAMPLES = 1000
BOOTSTRAP_CHUNK = 64
# Relative spread of the weights below which the β-IPS baseline is undefined.
WEIGHT_SPREAD_TOL = 1e-12


class EstimatorKind(str, Enum):
    IPS = "ips"
    SNIPS = "snips"
    BETA_IPS = "beta-ips"


class CiMethod(str, Enum):
    NORMAL = "normal"
    BOOTSTRAP = "bootstrap"


@dataclass(frozen=True)
class EstimateReport:
    estimator: EstimatorKind
    estimate: float
    std_err: float
    ci_low: float
    ci_high: float
    ess: float
    n: int
    fallback: bool = False
    baseline: Optional[float] = None

    @property
    def ci99(self) -> Tuple[float, float]:
        return (self.ci_low, self.ci_high)

    def to_row(self) -> Dict[str, object]:
        """CSV row: estimator,n,estimate,std_err,ci_low,ci_high,ess."""
        return {
            "estimator": self.estimator.value,
            "n": self.n,
            "estimate": self.estimate,
            "std_err": self.std_err,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "ess": self.ess,
        }


def importance_weights(
    data: LoggedDataset,
    target_props: Optional[np.ndarray] = None,
    max_weight: Optional[float] = None,
) -> np.ndarray:
    """w = π_t / π_0, optionally clipped at max_weight. Uses data.pt when target_props is None."""
    if target_props is None:
        if data.pt is None:
            raise DomainError("No target propensities: pass target_props or stamp the dataset.")
        target_props = data.pt
    pt = check_array(target_props, "target_props", expected_dim=1)
    if pt.shape[0] != len(data):
        raise DomainError(
            f"target_props has {pt.shape[0]} entries for a dataset of {len(data)} records."
        )
    if np.any((pt < 0) | (pt > 1)):
        raise DomainError("Target propensities must lie in [0, 1].")
    w = pt / data.p0
    if max_weight is not None:
        max_weight = check_real(max_weight, "max_weight", min_val=0.0, include_boundaries="neither")
        w = np.minimum(w, max_weight)
    return w


def effective_sample_size(w: np.ndarray) -> float:
    """(Σw)² / Σw²."""
    sq = float(np.sum(w * w))
    if sq == 0.0:
        return 0.0
    return float(np.sum(w)) ** 2 / sq


def _mean_std_err(terms: np.ndarray) -> Tuple[float, float]:
    m = terms.shape[0]
    estimate = float(np.mean(terms))
    if m < 2:
        return estimate, 0.0
    return estimate, float(np.std(terms, ddof=1)) / np.sqrt(m)


@dataclass(frozen=True)
class BaseEstimator(ABC):
    """
    Shared plumbing: weights, ESS and the 99% interval.

    Args:
        ci_method: "normal" (estimate ± 2.576·std_err) or "bootstrap".
        max_weight: clip weights at this value; None leaves them unclipped.
        n_bootstrap: bootstrap resamples.
        rng_seed: seed for bootstrap resampling.
    """
    ci_method: CiMethod = CiMethod.NORMAL
    max_weight: Optional[float] = None
    n_bootstrap: int = DEFAULT_BOOTSTRAP_RESAMPLES
    rng_seed: int = 0

    kind: ClassVar[EstimatorKind]

    @abstractmethod
    def _fit(self, w: np.ndarray, r: np.ndarray) -> Tuple[float, float, bool, Optional[float]]:
        """(estimate, std_err, fallback, baseline)."""

    def _point(self, w: np.ndarray, r: np.ndarray) -> float:
        return self._fit(w, r)[0]

    def _bootstrap(self, w: np.ndarray, r: np.ndarray) -> Tuple[float, float]:
        n_boot = check_positive_int(self.n_bootstrap, "n_bootstrap", min_val=2)
        m = w.shape[0]
        values = np.empty(n_boot)
        for start in range(0, n_boot, BOOTSTRAP_CHUNK):
            stop = min(start + BOOTSTRAP_CHUNK, n_boot)
            rng = child_rng(self.rng_seed, start // BOOTSTRAP_CHUNK)
            for b, idx in zip(range(start, stop), rng.integers(0, m, size=(stop - start, m))):
                try:
                    values[b] = self._point(w[idx], r[idx])
                except DegenerateWeightsError:
                    values[b] = np.nan
        values = values[np.isfinite(values)]
        if values.size == 0:
            raise DegenerateWeightsError(
                f"All {n_boot} bootstrap resamples have importance weights summing to zero."
            )
        alpha = (1.0 - CI_LEVEL) / 2.0
        return float(np.quantile(values, alpha)), float(np.quantile(values, 1.0 - alpha))

    def estimate(self, data: LoggedDataset, target_props: Optional[np.ndarray] = None) -> EstimateReport:
        w = importance_weights(data, target_props, self.max_weight)
        r = np.asarray(data.rewards, dtype=float)
        estimate, std_err, fallback, baseline = self._fit(w, r)

        if CiMethod(self.ci_method) is CiMethod.BOOTSTRAP:
            low, high = self._bootstrap(w, r)
            low, high = min(low, estimate), max(high, estimate)
        else:
            low, high = estimate - Z_CI * std_err, estimate + Z_CI * std_err

        report = EstimateReport(
            estimator=self.kind,
            estimate=estimate,
            std_err=std_err,
            ci_low=low,
            ci_high=high,
            ess=effective_sample_size(w),
            n=len(data),
            fallback=fallback,
            baseline=baseline,
        )
        logger.debug(
            "%s n=%d estimate=%.6f se=%.3e ess=%.1f",
            self.kind.value, report.n, estimate, std_err, report.ess,
        )
        return report


@dataclass(frozen=True)
class Ips(BaseEstimator):
    kind: ClassVar[EstimatorKind] = EstimatorKind.IPS

    def _fit(self, w, r):
        estimate, std_err = _mean_std_err(w * r)
        return estimate, std_err, False, None


@dataclass(frozen=True)
class Snips(BaseEstimator):
    kind: ClassVar[EstimatorKind] = EstimatorKind.SNIPS

    def _fit(self, w, r):
        total = float(np.sum(w))
        if total == 0.0:
            raise DegenerateWeightsError("Importance weights sum to zero; SNIPS is undefined.")
        estimate = float(np.sum(w * r)) / total
        # Delta-method variance of the ratio Σwr / Σw.
        std_err = float(np.sqrt(np.sum((w * (r - estimate)) ** 2))) / total
        return estimate, std_err, False, None


@dataclass(frozen=True)
class BetaIps(BaseEstimator):
    kind: ClassVar[EstimatorKind] = EstimatorKind.BETA_IPS

    def _fit(self, w, r):
        baseline = optimal_baseline(w, r)
        if baseline is None:
            logger.warning("β-IPS baseline undefined (weights have no spread); falling back to IPS")
            estimate, std_err = _mean_std_err(w * r)
            return estimate, std_err, True, None
        estimate, std_err = _mean_std_err(w * r - baseline * (w - 1.0))
        return estimate, std_err, False, baseline


def optimal_baseline(w: np.ndarray, r: np.ndarray) -> Optional[float]:
    """
    β minimising the sample variance of w·(r − β) + β.

    The terms are w·r − β·(w − 1), so the minimiser is the regression slope
    Σ(w − w̄)(wr − mean(wr)) / Σ(w − w̄)². Returns None when the weights are
    (numerically) constant.
    """
    w_c = w - np.mean(w)
    sxx = float(np.sum(w_c * w_c))
    scale = max(float(np.mean(w * w)), np.finfo(float).tiny)
    if sxx <= WEIGHT_SPREAD_TOL * scale * w.shape[0]:
        return None
    wr = w * r
    return float(np.sum(w_c * (wr - np.mean(wr)))) / sxx


def ips(data: LoggedDataset, target_props: Optional[np.ndarray] = None, **kwargs) -> EstimateReport:
    return Ips(**kwargs).estimate(data, target_props)


def snips(data: LoggedDataset, target_props: Optional[np.ndarray] = None, **kwargs) -> EstimateReport:
    return Snips(**kwargs).estimate(data, target_props)


def beta_ips(data: LoggedDataset, target_props: Optional[np.ndarray] = None, **kwargs) -> EstimateReport:
    return BetaIps(**kwargs).estimate(data, target_props)
