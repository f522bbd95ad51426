import numpy as np
import pytest
from scipy.optimize import OptimizeResult
from scipy.special import expit

import tsprop.models.blr as blr_module
from tsprop.exceptions import DomainError, FitError, InputError
from tsprop.models.blr import BayesLogReg, _objective, fit_blr
from tsprop.ope.dataset import LoggedDataset


def _logistic_data(m=400, d=2, n=2, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(m, d))
    actions = rng.integers(0, n, size=m)
    w_true = rng.normal(size=(n, d))
    p = expit(np.sum(X * w_true[actions], axis=1))
    rewards = (rng.random(m) < p).astype(float)
    return LoggedDataset(X, actions, rewards, np.full(m, 1.0 / n))


def test_fit_reaches_map():
    """The fitted mean has zero gradient and beats nearby weights on the objective."""
    data = _logistic_data()
    model = fit_blr(data, prior_var=10.0)
    prior_prec = 1.0 / 10.0
    for a in range(model.n):
        mask = data.actions == a
        X, y = data.contexts[mask], data.rewards[mask]
        w = model.means[a]
        grad = X.T @ (expit(X @ w) - y) + prior_prec * w
        assert np.max(np.abs(grad)) <= 1e-8
        best = _objective(w, X, y, prior_prec)
        for dx in np.linspace(-0.05, 0.05, 5):
            for dy in np.linspace(-0.05, 0.05, 5):
                assert best <= _objective(w + np.array([dx, dy]), X, y, prior_prec) + 1e-12


def test_precisions_are_laplace_diagonal():
    """Precision k is 1/prior_var + Σ p̂(1 − p̂)·x_k² at the MAP."""
    data = _logistic_data(seed=1)
    model = fit_blr(data, prior_var=1e3)
    for a in range(model.n):
        mask = data.actions == a
        X = data.contexts[mask]
        p = expit(X @ model.means[a])
        expected = 1e-3 + (p * (1.0 - p)) @ (X * X)
        np.testing.assert_allclose(model.precisions[a], expected, rtol=1e-12)


def test_unlogged_action_keeps_prior():
    """Actions without records stay at the prior."""
    data = _logistic_data(n=2)
    model = fit_blr(data, prior_var=5.0, n_actions=4)
    assert model.n == 4
    np.testing.assert_array_equal(model.means[3], 0.0)
    np.testing.assert_array_equal(model.precisions[3], 0.2)


def test_fit_rejects_bad_rewards_and_actions():
    """Rewards outside [0, 1] and actions beyond the space are domain errors."""
    data = _logistic_data()
    bad = LoggedDataset(data.contexts, data.actions, data.rewards * 2.0, data.p0)
    with pytest.raises(DomainError, match=r"\[0, 1\]"):
        fit_blr(bad)
    shifted = LoggedDataset(data.contexts, data.actions + 5, data.rewards, data.p0)
    with pytest.raises(DomainError, match="action space"):
        fit_blr(shifted, n_actions=3)


def test_fit_error_carries_diagnostics(monkeypatch):
    """An optimiser stopped early reports the action and its gradient."""
    monkeypatch.setattr(blr_module, "BLR_MAX_ITER", 1)
    with pytest.raises(FitError) as excinfo:
        fit_blr(_logistic_data())
    err = excinfo.value
    assert err.diagnostics["action"] == 0
    assert err.diagnostics["grad_norm"] > 1e-6
    assert err.best_weights.shape == (2,)


def test_checkpoint_round_trip(tmp_path):
    """A saved model loads back identical."""
    model = fit_blr(_logistic_data(), prior_var=3.0)
    path = tmp_path / "model.json"
    model.save(str(path))
    loaded = BayesLogReg.load(str(path))
    np.testing.assert_array_equal(loaded.means, model.means)
    np.testing.assert_array_equal(loaded.precisions, model.precisions)
    assert loaded.prior_var == 3.0


def test_checkpoint_errors(tmp_path):
    """Invalid payloads and missing files are input errors."""
    with pytest.raises(InputError):
        BayesLogReg.from_json('{"prior_var": -1, "means": [], "precisions": []}')
    with pytest.raises(InputError, match="Cannot read"):
        BayesLogReg.load(str(tmp_path / "missing.json"))


def test_model_validation():
    """Precisions must be positive and match the means in shape."""
    with pytest.raises(DomainError, match="same shape"):
        BayesLogReg(np.zeros((2, 3)), np.ones((2, 2)))
    with pytest.raises(DomainError, match="positive"):
        BayesLogReg(np.zeros((2, 2)), np.zeros((2, 2)))
    prior = BayesLogReg.prior(3, 2, prior_var=4.0)
    np.testing.assert_array_equal(prior.precisions, 0.25)


def test_fit_error_when_optimiser_fails(monkeypatch):
    """An unsuccessful optimiser result is a FitError carrying the optimiser's message."""
    def failing(fun, x0, **kwargs):
        return OptimizeResult(x=np.asarray(x0), success=False, status=1, nit=0, message="stopped")

    monkeypatch.setattr(blr_module, "minimize", failing)
    with pytest.raises(FitError, match="stopped") as excinfo:
        fit_blr(_logistic_data())
    assert excinfo.value.diagnostics["iterations"] == 0


def test_precision_loss_is_polished(monkeypatch):
    """A run stopped by rounding near the optimum still ends at the 1e-8 gradient."""
    real_minimize = blr_module.minimize

    def stalled(fun, x0, **kwargs):
        result = real_minimize(fun, x0, **kwargs)
        return OptimizeResult(
            x=result.x + 1e-4, success=False, status=blr_module.TRUST_REGION_PRECISION_LOSS,
            nit=result.nit, message="bad approximation",
        )

    monkeypatch.setattr(blr_module, "minimize", stalled)
    data = _logistic_data()
    model = fit_blr(data, prior_var=10.0)
    for a in range(model.n):
        mask = data.actions == a
        X, y = data.contexts[mask], data.rewards[mask]
        grad = X.T @ (expit(X @ model.means[a]) - y) + 0.1 * model.means[a]
        assert np.max(np.abs(grad)) <= 1e-8
