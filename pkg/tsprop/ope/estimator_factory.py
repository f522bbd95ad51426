from typing import List

from tsprop.exceptions import InputError
from tsprop.ope.estimators import BaseEstimator, BetaIps, Ips, Snips
from tsprop.ope.supported_estimators import beta_ips_supported, ips_supported, snips_supported

ESTIMATOR_NAMES = [ips_supported[0], snips_supported[0], beta_ips_supported[0]]


class EstimatorFactory:
    """
    Factory class to create estimators from their command-line names.
    """
    _estimator_map = {
        **{name: Ips for name in ips_supported},
        **{name: Snips for name in snips_supported},
        **{name: BetaIps for name in beta_ips_supported},
    }

    @staticmethod
    def create_estimator(name: str, **kwargs) -> BaseEstimator:
        """
        Creates an estimator instance from its name.
        Args:
            name (str): Estimator name, e.g. "ips", "snips", "beta-ips".
            **kwargs: Forwarded to the estimator (ci_method, max_weight, ...).
        Returns:
            The estimator instance.
        Raises:
            InputError: If the estimator name is not supported.
        """
        estimator_cls = EstimatorFactory._estimator_map.get(name.strip().lower())
        if not estimator_cls:
            raise InputError(
                f"Estimator '{name}' is not supported. Valid names: {', '.join(ESTIMATOR_NAMES)}."
            )
        return estimator_cls(**kwargs)

    @staticmethod
    def parse_names(text: str) -> List[str]:
        """Split a comma-separated list and validate every name."""
        names = [part.strip() for part in text.split(",") if part.strip()]
        if not names:
            raise InputError("At least one estimator name is required.")
        for name in names:
            EstimatorFactory.create_estimator(name)
        return names
