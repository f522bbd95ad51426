import numpy as np
import pandas as pd
import pytest

from tsprop.exceptions import DomainError
from tsprop.ope.dataset import LoggedDataset
from tsprop.ope.estimators import BetaIps, Ips, Snips
from tsprop.ope.target import target_propensities_for_log
from tsprop.run import (
    REPORT_COLUMNS,
    SWEEP_COLUMNS,
    clear_policy_cache,
    engine_deviation,
    evaluate,
    fit_policy,
    sweep,
    training_data,
)
from tsprop.sim.environment import EnvConfig, Environment, generate_log, true_value

ESTIMATORS = ["ips", "snips", "beta-ips"]


@pytest.fixture
def cfg():
    clear_policy_cache()
    yield EnvConfig(d=3, n=3, train_size=200, truth_contexts=500, truth_draws=20)
    clear_policy_cache()


def _eval_data(cfg, size=150, seed=11):
    return generate_log(Environment.from_config(cfg), cfg, size, seed)


def test_policy_cache(cfg):
    """The same config and training data reuse one fitted policy."""
    train = training_data(cfg, seed=0)
    first = fit_policy(cfg, train)
    assert fit_policy(cfg, train) is first
    other = training_data(cfg, seed=1)
    assert fit_policy(cfg, other) is not first
    clear_policy_cache()
    assert fit_policy(cfg, train) is not first


def test_training_data_reproducible(cfg):
    """Training data drawn from a seed repeats exactly."""
    assert training_data(cfg, 3).fingerprint() == training_data(cfg, 3).fingerprint()
    assert len(training_data(cfg, 3)) == 200


def test_evaluate_table(cfg):
    """One row per estimator followed by the ground-truth row."""
    train = training_data(cfg, seed=0)
    result = evaluate(cfg, train, _eval_data(cfg), ESTIMATORS, seed=0)
    assert list(result.table.columns) == REPORT_COLUMNS
    assert list(result.table["estimator"]) == ESTIMATORS + ["truth"]
    assert result.table["n"].iloc[0] == 150
    assert result.table["estimate"].iloc[-1] == result.truth.exact_value
    assert np.all((result.target_props > 0) & (result.target_props <= 1))
    assert result.engine_deviation is not None and result.engine_deviation < 1e-4


def test_evaluate_target_equals_logging(cfg):
    """Evaluating π_0 on its own log weights every record by one."""
    data = _eval_data(cfg)
    result = evaluate(cfg, training_data(cfg, 0), data, ["ips"], target_equals_logging=True)
    assert result.reports[0].estimate == float(np.mean(data.rewards))
    np.testing.assert_array_equal(result.target_props, data.p0)
    assert result.engine_deviation is None


def test_evaluate_checks_dimensions(cfg):
    """Logs with the wrong context width are rejected."""
    wrong = generate_log(
        Environment.from_config(EnvConfig(d=4, n=3)), EnvConfig(d=4, n=3), 20, 0
    )
    with pytest.raises(DomainError, match="d=3"):
        evaluate(cfg, training_data(cfg, 0), wrong, ["ips"])


def test_engine_deviation_small(cfg):
    """The default joint engine stays within the marginal MVN route's accuracy."""
    policy = fit_policy(cfg, training_data(cfg, 0))
    assert engine_deviation(policy, _eval_data(cfg), records=20) < 1e-4


def test_sweep_shape_and_order(cfg):
    """Rows come in (size, replicate, estimator) order."""
    result = sweep(cfg, [20, 50], replicates=2, estimators=ESTIMATORS, seed=0)
    table = result.table
    assert list(table.columns) == SWEEP_COLUMNS
    assert len(table) == 2 * 2 * 3
    assert list(table["size"]) == [20] * 6 + [50] * 6
    assert list(table["replicate"])[:6] == [0, 0, 0, 1, 1, 1]
    assert list(table["estimator"])[:3] == ESTIMATORS


def test_sweep_deterministic_for_any_jobs(cfg):
    """Same seed, same table, whether run serially or on threads."""
    serial = sweep(cfg, [20, 40], replicates=3, estimators=["ips", "snips"], seed=4, jobs=1)
    threaded = sweep(cfg, [20, 40], replicates=3, estimators=["ips", "snips"], seed=4, jobs=3)
    pd.testing.assert_frame_equal(serial.table, threaded.table)
    assert serial.truth == threaded.truth


def test_sweep_size_validation(cfg):
    """Sizes must be positive and strictly ascending."""
    with pytest.raises(DomainError, match="ascending"):
        sweep(cfg, [50, 20], replicates=1, estimators=["ips"])
    with pytest.raises(DomainError):
        sweep(cfg, [0, 20], replicates=1, estimators=["ips"])


# ---------------------------------------------------------------------------
# Estimator behaviour on the synthetic experiment
# ---------------------------------------------------------------------------

REPLICATE_RECORDS = 96_000


@pytest.fixture(scope="module")
def experiment():
    """
    A fitted TS target, its exact value, and one long evaluation log.

    Records are iid, so consecutive blocks of the log are independent replicates.
    """
    cfg = EnvConfig(d=3, n=3, train_size=400)
    env = Environment.from_config(cfg)
    policy = fit_policy(cfg, training_data(cfg, seed=0)).with_engine("quadrature")
    truth = true_value(env, policy, n_contexts=40_000, rng_seed=5, draws=1)
    data = generate_log(env, cfg, REPLICATE_RECORDS, rng_seed=21)
    target_props = target_propensities_for_log(data, policy)
    yield truth, data, target_props
    clear_policy_cache()


def _replicates(experiment, estimator, size):
    truth, data, target_props = experiment
    reports = []
    for start in range(0, REPLICATE_RECORDS, size):
        rows = slice(start, start + size)
        block = LoggedDataset(data.contexts[rows], data.actions[rows], data.rewards[rows], data.p0[rows])
        reports.append(estimator.estimate(block, target_props[rows]))
    return truth.exact_value, reports


def test_ips_is_unbiased(experiment):
    """The mean IPS estimate over 300 replicates matches the exact policy value."""
    exact, reports = _replicates(experiment, Ips(), 320)
    estimates = np.array([r.estimate for r in reports])
    assert len(estimates) == 300
    se = np.sqrt(np.var(estimates, ddof=1) / len(estimates) + experiment[0].exact_std_err ** 2)
    assert abs(estimates.mean() - exact) <= 4.0 * se


@pytest.mark.parametrize("estimator", [Ips(), Snips()])
def test_error_shrinks_with_log_size(experiment, estimator):
    """Root-mean-square error falls as the log grows sixteenfold."""
    rmse = {}
    for size in (60, 960):
        exact, reports = _replicates(experiment, estimator, size)
        rmse[size] = np.sqrt(np.mean([(r.estimate - exact) ** 2 for r in reports]))
    assert rmse[960] < 0.5 * rmse[60]


@pytest.mark.parametrize("estimator", [Ips(), Snips(), BetaIps()])
def test_interval_width_and_coverage(experiment, estimator):
    """99% intervals narrow like 1/sqrt(N) and cover the exact value about 99% of the time."""
    widths = {}
    for size in (60, 960):
        exact, reports = _replicates(experiment, estimator, size)
        widths[size] = np.mean([r.ci_high - r.ci_low for r in reports])
        if size == 960:
            covered = np.mean([r.ci_low <= exact <= r.ci_high for r in reports])
            assert covered >= 0.95
    assert widths[60] / widths[960] == pytest.approx(4.0, rel=0.2)


def test_coverage_at_moderate_size(experiment):
    """Across 300 replicates of 320 records the IPS interval covers the truth at least 97% of the time."""
    exact, reports = _replicates(experiment, Ips(), 320)
    covered = np.mean([r.ci_low <= exact <= r.ci_high for r in reports])
    assert covered >= 0.97
