import json

import numpy as np
import pytest
from pydantic import ValidationError

from tsprop.exceptions import DomainError, InputError
from tsprop.models.blr import fit_blr
from tsprop.models.policy import ThompsonSamplingPolicy
from tsprop.sim.environment import EnvConfig, Environment, generate_log, logging_policy, true_value
from tsprop.utils.config import load_env_config

SMALL = dict(d=3, n=4, train_size=200, truth_contexts=500, truth_draws=20)


def test_environment_is_seeded():
    """The same env_seed draws the same embeddings; another seed does not."""
    a = Environment.from_config(EnvConfig(**SMALL))
    b = Environment.from_config(EnvConfig(**SMALL))
    c = Environment.from_config(EnvConfig(**SMALL, env_seed=1))
    np.testing.assert_array_equal(a.action_embeddings, b.action_embeddings)
    assert not np.array_equal(a.action_embeddings, c.action_embeddings)
    assert (a.n, a.d) == (4, 3)


def test_true_q_is_logistic_score():
    """Click probabilities are logistic(x·e_a/√d + b_a)."""
    env = Environment.from_config(EnvConfig(**SMALL))
    X = np.random.default_rng(0).normal(size=(6, 3))
    q = env.true_q(X)
    expected = 1.0 / (1.0 + np.exp(-(X @ env.action_embeddings.T / np.sqrt(3) + env.biases)))
    np.testing.assert_allclose(q, expected, rtol=1e-12)


def test_environment_validation():
    """One bias per action is required."""
    with pytest.raises(DomainError, match="One bias"):
        Environment(np.zeros((3, 2)), np.zeros(2))


def test_generate_log():
    """Logs are reproducible and store the softmax propensity of the logged action."""
    cfg = EnvConfig(**SMALL)
    env = Environment.from_config(cfg)
    a = generate_log(env, cfg, 300, rng_seed=5)
    b = generate_log(env, cfg, 300, rng_seed=5)
    assert a.fingerprint() == b.fingerprint()
    probs = logging_policy(env, cfg).action_probs(a.contexts)
    np.testing.assert_array_equal(a.p0, probs[np.arange(300), a.actions])
    assert set(np.unique(a.rewards)) <= {0.0, 1.0}


def test_generate_log_without_noise():
    """Without reward noise the reward is the click probability itself."""
    cfg = EnvConfig(**SMALL, reward_noise=False)
    env = Environment.from_config(cfg)
    data = generate_log(env, cfg, 50, rng_seed=2)
    q = env.true_q(data.contexts)
    np.testing.assert_array_equal(data.rewards, q[np.arange(50), data.actions])


def test_logging_policy_prefers_low_click_actions():
    """A negative temperature puts more mass on lower click probabilities."""
    cfg = EnvConfig(**SMALL)
    env = Environment.from_config(cfg)
    x = np.random.default_rng(3).normal(size=(1, 3))
    probs = logging_policy(env, cfg).action_probs(x)[0]
    q = env.true_q(x)[0]
    assert np.argmax(probs) == np.argmin(q)
    assert probs.sum() == pytest.approx(1.0)


def test_true_value_estimates_agree():
    """The Monte-Carlo and analytic policy values agree within their error."""
    cfg = EnvConfig(**SMALL)
    env = Environment.from_config(cfg)
    truth = true_value(env, logging_policy(env, cfg), n_contexts=2000, rng_seed=1, draws=50)
    assert abs(truth.mc_value - truth.exact_value) <= 4.0 * truth.diff_std_err
    assert truth.n_contexts == 2000
    assert set(truth.to_dict()) >= {"mc_value", "exact_value", "diff_std_err"}


@pytest.mark.parametrize("engine", ["joint", "quadrature"])
def test_true_value_of_thompson_sampling(engine):
    """For a fitted TS policy, the analytic value matches action sampling within error."""
    cfg = EnvConfig(**SMALL)
    env = Environment.from_config(cfg)
    model = fit_blr(generate_log(env, cfg, 400, rng_seed=7), cfg.prior_var, n_actions=cfg.n)
    policy = ThompsonSamplingPolicy(model, engine=engine)
    truth = true_value(env, policy, n_contexts=300, rng_seed=2, draws=200)
    assert abs(truth.mc_value - truth.exact_value) <= 4.0 * truth.diff_std_err
    assert truth.diff_std_err > 0.0


def test_config_defaults_and_hash():
    """Defaults follow the desk-scale experiment; the hash tracks every field."""
    cfg = EnvConfig()
    assert (cfg.d, cfg.n, cfg.logger_temp, cfg.prior_var) == (10, 10, -1.5, 1e3)
    assert cfg.propensity_engine == "joint"
    assert cfg.config_hash() == EnvConfig().config_hash()
    assert cfg.config_hash() != EnvConfig(env_seed=1).config_hash()
    with pytest.raises(ValidationError):
        EnvConfig(unknown=1)
    with pytest.raises(ValidationError):
        EnvConfig(n=1)


def test_load_env_config(tmp_path):
    """Config files fill in defaults; every failure is an input error."""
    path = tmp_path / "env.json"
    path.write_text(json.dumps({"d": 4, "n": 3}))
    cfg = load_env_config(str(path))
    assert (cfg.d, cfg.n, cfg.train_size) == (4, 3, 2048)

    path.write_text(json.dumps({"d": 0}))
    with pytest.raises(InputError, match="Invalid config"):
        load_env_config(str(path))
    path.write_text("{")
    with pytest.raises(InputError, match="Malformed JSON"):
        load_env_config(str(path))
    with pytest.raises(InputError, match="Cannot read"):
        load_env_config(str(tmp_path / "missing.json"))
