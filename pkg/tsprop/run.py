import hashlib
import json
import os
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from tsprop.exceptions import DomainError
from tsprop.models.base import BasePolicy
from tsprop.models.blr import fit_blr
from tsprop.models.policy import ThompsonSamplingPolicy
from tsprop.ope.dataset import LoggedDataset
from tsprop.ope.estimator_factory import EstimatorFactory
from tsprop.ope.estimators import Z_CI, EstimateReport
from tsprop.ope.target import target_propensities_for_log
from tsprop.sim.environment import EnvConfig, Environment, GroundTruth, generate_log, logging_policy, true_value
from tsprop.utils.logger import get_logger
from tsprop.utils.seeding import derive_seed
from tsprop.utils.validators import check_positive_int

logger = get_logger(__name__)

REPORT_COLUMNS = ["estimator", "n", "estimate", "std_err", "ci_low", "ci_high", "ess"]
SWEEP_COLUMNS = ["size", "replicate", "estimator", "estimate", "std_err", "ci_low", "ci_high", "ess"]
CSV_FLOAT_FORMAT = "%.17g"
ENGINE_CHECK_RECORDS = 100


_policy_cache: Dict[str, ThompsonSamplingPolicy] = {}
_policy_cache_lock = threading.Lock()


def _cache_key(cfg: EnvConfig, train: LoggedDataset) -> str:
    """Stable key that changes whenever the config or the training data change."""
    payload = {"config": cfg.config_hash(), "train": train.fingerprint()}
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def fit_policy(cfg: EnvConfig, train: LoggedDataset) -> ThompsonSamplingPolicy:
    """
    Fit the TS policy on `train`, reusing an earlier fit for the same config and data.

    fit_blr is deterministic, so a cached policy is identical to a fresh one.
    """
    key = _cache_key(cfg, train)
    with _policy_cache_lock:
        cached = _policy_cache.get(key)
    if cached is not None:
        logger.debug("Reusing fitted policy %s", key[:12])
        return cached

    model = fit_blr(train, cfg.prior_var, n_actions=cfg.n)
    policy = ThompsonSamplingPolicy(
        model,
        engine=cfg.propensity_engine,
        target_abs_err=cfg.target_abs_err,
        rng_seed=derive_seed(cfg.env_seed, "ts-policy"),
    )
    with _policy_cache_lock:
        _policy_cache.setdefault(key, policy)
        return _policy_cache[key]


def clear_policy_cache() -> None:
    with _policy_cache_lock:
        _policy_cache.clear()


def training_data(cfg: EnvConfig, seed: int, train: Optional[LoggedDataset] = None) -> LoggedDataset:
    """The given training set, or cfg.train_size fresh records drawn from the seed."""
    if train is not None:
        return train
    return generate_log(Environment.from_config(cfg), cfg, cfg.train_size, derive_seed(seed, "train"))


def engine_deviation(policy: ThompsonSamplingPolicy, data: LoggedDataset, records: int = ENGINE_CHECK_RECORDS) -> float:
    """Largest |engine − marginal MVN route| over the first `records` logged propensities."""
    head = data.head(records)
    reference = policy.with_engine("mvn").propensities_of(head.contexts, head.actions)
    values = policy.propensities_of(head.contexts, head.actions)
    deviation = float(np.max(np.abs(values - reference)))
    logger.info(
        "Engine '%s' vs marginal MVN route on %d records: max deviation %.3e",
        policy.engine, len(head), deviation,
    )
    return deviation


def _estimators(names: Sequence[str], seed: int, ci_method: str, max_weight: Optional[float]):
    return [
        EstimatorFactory.create_estimator(
            name, ci_method=ci_method, max_weight=max_weight, rng_seed=derive_seed(seed, "bootstrap", i)
        )
        for i, name in enumerate(names)
    ]


def _check_dims(cfg: EnvConfig, data: LoggedDataset, name: str) -> None:
    if data.d != cfg.d:
        raise DomainError(f"{name} has {data.d} context features, config expects d={cfg.d}.")
    if np.any(data.actions >= cfg.n):
        raise DomainError(f"{name} logs actions outside [0, {cfg.n}).")


def report_table(reports: Sequence[EstimateReport], truth: GroundTruth) -> pd.DataFrame:
    """Estimator rows followed by a single "truth" row carrying exact_value."""
    rows = [r.to_row() for r in reports]
    rows.append({
        "estimator": "truth",
        "n": truth.n_contexts,
        "estimate": truth.exact_value,
        "std_err": truth.exact_std_err,
        "ci_low": truth.exact_value - Z_CI * truth.exact_std_err,
        "ci_high": truth.exact_value + Z_CI * truth.exact_std_err,
        "ess": float("nan"),
    })
    return pd.DataFrame(rows, columns=REPORT_COLUMNS)


def write_table(table: pd.DataFrame, path: str) -> None:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    table.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT)
    logger.info("Wrote %d rows to %s", len(table), path)


@dataclass
class EvaluationResult:
    reports: List[EstimateReport]
    truth: GroundTruth
    table: pd.DataFrame
    target_props: np.ndarray
    engine_deviation: Optional[float] = None


def evaluate(
    cfg: EnvConfig,
    train: LoggedDataset,
    eval_data: LoggedDataset,
    estimators: Sequence[str],
    seed: int = 0,
    jobs: int = 1,
    target_equals_logging: bool = False,
    ci_method: str = "normal",
    max_weight: Optional[float] = None,
) -> EvaluationResult:
    """
    Fit the TS policy on `train`, score `eval_data` with every named estimator and
    compute the policy's ground-truth value.

    Args:
        cfg: environment and experiment settings.
        train: training data for the BLR fit.
        eval_data: logged data to evaluate on.
        estimators: estimator names, e.g. ["ips", "snips"].
        seed: master seed for ground truth and bootstrap.
        jobs: worker threads.
        target_equals_logging: evaluate the logging policy itself (π_t := π_0).
        ci_method: "normal" or "bootstrap".
        max_weight: optional weight clipping.
    """
    _check_dims(cfg, eval_data, "eval data")
    estimator_objs = _estimators(estimators, seed, ci_method, max_weight)
    env = Environment.from_config(cfg)

    deviation = None
    if target_equals_logging:
        policy: BasePolicy = logging_policy(env, cfg)
        target_props = np.array(eval_data.p0, copy=True)
    else:
        _check_dims(cfg, train, "training data")
        ts_policy = fit_policy(cfg, train)
        target_props = target_propensities_for_log(eval_data, ts_policy, jobs=jobs)
        if ts_policy.engine != "mvn":
            deviation = engine_deviation(ts_policy, eval_data)
        policy = ts_policy

    reports = [est.estimate(eval_data, target_props) for est in estimator_objs]
    truth = true_value(
        env, policy, cfg.truth_contexts, derive_seed(seed, "truth"), cfg.truth_draws, jobs=jobs
    )
    return EvaluationResult(reports, truth, report_table(reports, truth), target_props, deviation)


@dataclass
class SweepResult:
    table: pd.DataFrame
    truth: GroundTruth


def _check_sizes(sizes: Sequence[int]) -> List[int]:
    sizes = [check_positive_int(s, "size") for s in sizes]
    if not sizes:
        raise DomainError("At least one dataset size is required.")
    if any(b <= a for a, b in zip(sizes, sizes[1:])):
        raise DomainError(f"Sizes must be strictly ascending, got {sizes}.")
    return sizes


def sweep(
    cfg: EnvConfig,
    sizes: Sequence[int],
    replicates: int,
    estimators: Sequence[str],
    seed: int = 0,
    jobs: int = 1,
    train: Optional[LoggedDataset] = None,
    ci_method: str = "normal",
    max_weight: Optional[float] = None,
) -> SweepResult:
    """
    Evaluate every estimator on fresh logs of each size, `replicates` times per size.

    Each (size, replicate) cell draws its data from its own derived seed and
    the rows come out in (size, replicate, estimator) order for any `jobs`.
    """
    sizes = _check_sizes(sizes)
    replicates = check_positive_int(replicates, "replicates")
    jobs = check_positive_int(jobs, "jobs")
    names = list(estimators)
    _estimators(names, seed, ci_method, max_weight)

    env = Environment.from_config(cfg)
    train = training_data(cfg, seed, train)
    _check_dims(cfg, train, "training data")
    policy = fit_policy(cfg, train)
    truth = true_value(
        env, policy, cfg.truth_contexts, derive_seed(seed, "truth"), cfg.truth_draws, jobs=jobs
    )

    cells: List[Tuple[int, int]] = [(size, rep) for size in sizes for rep in range(replicates)]

    def run_cell(cell: Tuple[int, int]) -> List[dict]:
        size, rep = cell
        cell_seed = derive_seed(seed, f"sweep-{size}", rep)
        data = generate_log(env, cfg, size, cell_seed)
        target_props = target_propensities_for_log(data, policy)
        rows = []
        for est in _estimators(names, cell_seed, ci_method, max_weight):
            row = est.estimate(data, target_props).to_row()
            row.pop("n")
            rows.append({"size": size, "replicate": rep, **row})
        logger.debug("Sweep cell size=%d replicate=%d done", size, rep)
        return rows

    if jobs == 1:
        results = [run_cell(cell) for cell in cells]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run_cell, cells))

    table = pd.DataFrame([row for rows in results for row in rows], columns=SWEEP_COLUMNS)
    logger.info("Sweep finished: %d sizes x %d replicates", len(sizes), replicates)
    return SweepResult(table, truth)
