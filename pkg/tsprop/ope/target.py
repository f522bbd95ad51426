import numpy as np

from tsprop.models.base import BasePolicy
from tsprop.ope.dataset import LoggedDataset
from tsprop.utils.logger import get_logger

logger = get_logger(__name__)

PROPENSITY_FLOOR = 1e-300


def target_propensities_for_log(data: LoggedDataset, policy: BasePolicy, jobs: int = 1) -> np.ndarray:
    """
    π_t(a_i | x_i) for every logged record, floored at 1e-300.

    Each record is computed on its own, so the batch result equals the
    record-by-record result bit for bit, for any `jobs`.
    """
    props = policy.propensities_of(data.contexts, data.actions, jobs=jobs)
    logger.debug("Target propensities for %d records (min %.3e)", len(data), float(np.min(props)))
    return np.maximum(props, PROPENSITY_FLOOR)
