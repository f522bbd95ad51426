import numpy as np
import pytest
from scipy import stats
from scipy.integrate import quad
from scipy.special import betainc
from scipy.stats import norm

import tsprop.core.propensity as propensity_module
from tsprop.core.oracle import mc_propensities, mc_propensities_param
from tsprop.core.propensity import (
    BetaRoute,
    PropensityMethod,
    beta_pairwise,
    beta_pmax_direct,
    beta_pmax_inclexcl,
    beta_pmin,
    beta_propensities,
    gaussian_propensities,
    gaussian_propensity,
    gaussian_propensity_grid,
    gaussian_propensity_joint,
    grid_propensities,
    grid_target_propensities,
    lognormal_propensity,
    propensities,
    quadrature_propensities,
    quadrature_propensity,
)
from tsprop.exceptions import AccuracyError, DomainError, SizeError
from tsprop.models.beliefs import BeliefSet, LinearGaussianPosterior, posterior_to_outcome


def _random_normal_set(rng, n):
    return BeliefSet.from_params(
        "normal", list(zip(rng.normal(0.0, 1.0, n), rng.uniform(0.1, 2.0, n)))
    )


def _random_beta_set(rng, n, high):
    return BeliefSet.from_params(
        "beta", list(zip(rng.integers(1, high + 1, n), rng.integers(1, high + 1, n)))
    )


# ---------------------------------------------------------------------------
# Gaussian
# ---------------------------------------------------------------------------

def test_gaussian_two_actions_closed_form():
    """With two actions the propensity is Φ((μ_0 − μ_1)/sqrt(σ_0² + σ_1²))."""
    rng = np.random.default_rng(0)
    for _ in range(20):
        bs = _random_normal_set(rng, 2)
        mu, s2 = bs.mu, bs.sigma2
        expected = norm.cdf((mu[0] - mu[1]) / np.sqrt(s2.sum()))
        assert gaussian_propensity(bs, 0).value == pytest.approx(expected, abs=1e-6)


def test_gaussian_matches_monte_carlo():
    """The MVN route agrees with argmax frequencies within 4 standard errors."""
    rng = np.random.default_rng(1)
    for i in range(6):
        bs = _random_normal_set(rng, int(rng.integers(3, 7)))
        vec = gaussian_propensities(bs, rng_seed=i)
        mc = mc_propensities(bs, draws=200_000, rng_seed=i)
        assert np.all(np.abs(vec.probs - mc.probs) <= 4.0 * mc.std_err + 1e-4)


def test_gaussian_vector_sums_to_one():
    """MVN propensities sum to one within the accumulated error targets."""
    bs = BeliefSet.from_params("normal", [(0.0, 1.0), (0.3, 0.5), (-0.2, 2.0), (0.1, 0.1)])
    vec = gaussian_propensities(bs, target_abs_err=1e-6)
    assert vec.probs.sum() == pytest.approx(1.0, abs=1e-5)
    assert vec.method is PropensityMethod.GAUSSIAN_MVN


def test_lognormal_bit_equals_gaussian():
    """exp is monotone: lognormal propensities equal those of the underlying normals."""
    rng = np.random.default_rng(2)
    for i in range(10):
        n = int(rng.integers(2, 6))
        ln = BeliefSet.from_params(
            "lognormal", list(zip(rng.normal(0.0, 1.0, n), rng.uniform(0.1, 2.0, n)))
        )
        t = int(rng.integers(0, n))
        assert lognormal_propensity(ln, t, rng_seed=i) == gaussian_propensity(ln.as_normal(), t, rng_seed=i)


def test_gaussian_rejects_other_kinds_and_targets():
    """Kind and target index are validated."""
    beta = BeliefSet.from_params("beta", [(1, 1), (2, 2)])
    with pytest.raises(DomainError, match="normal"):
        gaussian_propensity(beta, 0)
    normal = BeliefSet.from_params("normal", [(0, 1), (0, 1)])
    with pytest.raises(DomainError, match="out of range"):
        gaussian_propensity(normal, 2)
    with pytest.raises(DomainError, match="joint covariance"):
        gaussian_propensity_joint(normal, 0)


# ---------------------------------------------------------------------------
# Joint Gaussian
# ---------------------------------------------------------------------------

def test_joint_diagonal_equals_marginal():
    """A diagonal joint covariance gives the independent-beliefs propensities."""
    rng = np.random.default_rng(3)
    bs = _random_normal_set(rng, 4)
    joint = BeliefSet(bs.beliefs, np.diag(bs.sigma2))
    for t in range(bs.n):
        a = gaussian_propensity_joint(joint, t, target_abs_err=1e-6).value
        b = gaussian_propensity(bs, t, target_abs_err=1e-6).value
        assert a == pytest.approx(b, abs=2e-5)


def test_joint_duplicate_actions_share_mass():
    """Identical feature vectors tie and split their mass evenly."""
    features = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    post = LinearGaussianPosterior(np.zeros(2), np.eye(2), features)
    bs = posterior_to_outcome(post)
    values = [gaussian_propensity_joint(bs, t).value for t in range(3)]
    np.testing.assert_allclose(values, [0.25, 0.25, 0.5], atol=1e-12)

    mc = mc_propensities_param(post, draws=200_000, rng_seed=5)
    assert np.all(np.abs(np.array(values) - mc.probs) <= 4.0 * mc.std_err + 1e-4)


def test_joint_constant_differences():
    """A surely-smaller target has propensity 0; dominating all constants gives 1."""
    bs = BeliefSet.from_params("normal", [(0.0, 1.0), (1.0, 1.0)], [[1.0, 1.0], [1.0, 1.0]])
    assert gaussian_propensity_joint(bs, 0).value == 0.0
    assert gaussian_propensity_joint(bs, 1).value == 1.0


def test_joint_matches_parameter_sampling():
    """Outcome-space propensities equal argmax frequencies of weight draws."""
    rng = np.random.default_rng(4)
    for i in range(5):
        d, n = 4, int(rng.integers(3, 5))
        a = rng.normal(size=(d, d))
        post = LinearGaussianPosterior(rng.normal(size=d), a @ a.T + 0.1 * np.eye(d), rng.normal(size=(n, d)))
        vec = gaussian_propensities(posterior_to_outcome(post), joint=True, rng_seed=i)
        mc = mc_propensities_param(post, draws=200_000, rng_seed=i)
        assert np.all(np.abs(vec.probs - mc.probs) <= 4.0 * mc.std_err + 1e-4)


# ---------------------------------------------------------------------------
# Trapezoid engine
# ---------------------------------------------------------------------------

def test_grid_matches_mvn_route():
    """The trapezoid engine agrees with the MVN route."""
    rng = np.random.default_rng(6)
    for i in range(8):
        bs = _random_normal_set(rng, int(rng.integers(2, 6)))
        grid = grid_propensities(bs)
        mvn = gaussian_propensities(bs, target_abs_err=1e-6, rng_seed=i)
        np.testing.assert_allclose(grid.probs, mvn.probs, atol=1e-5)


def test_grid_sums_to_one():
    """Trapezoid propensities sum to one to near machine precision."""
    rng = np.random.default_rng(7)
    for _ in range(20):
        vec = grid_propensities(_random_normal_set(rng, int(rng.integers(2, 12))))
        assert vec.probs.sum() == pytest.approx(1.0, abs=1e-9)


def test_grid_extreme_variance_ratios():
    """Very unequal variances still give a valid distribution."""
    bs = BeliefSet.from_params("normal", [(0.0, 1.0), (0.1, 1e-4), (-0.1, 1e2)])
    vec = grid_propensities(bs)
    assert vec.probs.sum() == pytest.approx(1.0, abs=1e-9)
    assert np.all(vec.probs > 0)


def test_grid_uniform_for_identical_beliefs():
    """Identical beliefs, even with a vanishing variance, give 1/n each."""
    for s2 in (1.0, 1e-300):
        bs = BeliefSet.from_params("normal", [(0.0, s2)] * 5)
        np.testing.assert_allclose(grid_propensities(bs).probs, 0.2, atol=1e-12)


def test_grid_rows_independent_of_batch():
    """Each row's value is the same alone or inside a larger batch."""
    rng = np.random.default_rng(8)
    m, n = 50, 6
    mu = rng.normal(size=(m, n))
    sigma2 = rng.uniform(0.05, 3.0, size=(m, n))
    targets = rng.integers(0, n, size=m)
    batch, _ = grid_target_propensities(mu, sigma2, targets)
    for i in range(m):
        alone, _ = grid_target_propensities(mu[i:i + 1], sigma2[i:i + 1], targets[i:i + 1])
        assert alone[0] == batch[i]


def test_grid_single_target_and_lognormal():
    """The single-target form accepts lognormal beliefs through their logarithm."""
    ln = BeliefSet.from_params("lognormal", [(0.0, 1.0), (0.5, 0.3), (-0.5, 2.0)])
    est = gaussian_propensity_grid(ln, 1)
    assert est.method is PropensityMethod.QUADRATURE
    assert est.value == grid_propensities(ln).probs[1]


def test_grid_validation():
    """Shape mismatches and out-of-range targets are rejected."""
    with pytest.raises(DomainError, match="Shape mismatch"):
        grid_target_propensities(np.zeros((2, 3)), np.ones((2, 2)), [0, 1])
    with pytest.raises(DomainError, match="targets"):
        grid_target_propensities(np.zeros((1, 3)), np.ones((1, 3)), [3])


# ---------------------------------------------------------------------------
# Beta
# ---------------------------------------------------------------------------

def test_beta_pairwise_closed_forms():
    """Beta(1,1) vs Beta(1,1) is 1/2; Beta(2,1) vs Beta(1,1) is 2/3."""
    assert beta_pairwise(1, 1, 1, 1) == pytest.approx(0.5, abs=1e-12)
    assert beta_pairwise(2, 1, 1, 1) == pytest.approx(2.0 / 3.0, abs=1e-12)


def test_beta_pairwise_matches_integral():
    """P(p_i > p_j) equals ∫ f_i(x) F_j(x) dx."""
    rng = np.random.default_rng(9)
    for _ in range(50):
        ai, bi, aj, bj = (int(v) for v in rng.integers(1, 16, size=4))
        fi, fj = stats.beta(ai, bi), stats.beta(aj, bj)
        expected, _ = quad(lambda x: fi.pdf(x) * fj.cdf(x), 0.0, 1.0, epsabs=1e-14, epsrel=1e-13, limit=200)
        assert beta_pairwise(ai, bi, aj, bj) == pytest.approx(expected, abs=1e-9)


def test_beta_pairwise_matches_incomplete_beta_integral():
    """P(p_i > p_j) equals ∫ f_j(p)·(1 − I_p(α_i, β_i)) dp."""
    rng = np.random.default_rng(19)
    for _ in range(30):
        ai, bi, aj, bj = (int(v) for v in rng.integers(1, 21, size=4))
        fj = stats.beta(aj, bj)
        expected, _ = quad(
            lambda p: fj.pdf(p) * (1.0 - betainc(ai, bi, p)), 0.0, 1.0, epsabs=1e-14, epsrel=1e-13, limit=200
        )
        assert beta_pairwise(ai, bi, aj, bj) == pytest.approx(expected, abs=1e-9)


def test_beta_pairwise_complement():
    """P(p_i > p_j) + P(p_j > p_i) = 1 for continuous beliefs."""
    assert beta_pairwise(3, 7, 5, 2) + beta_pairwise(5, 2, 3, 7) == pytest.approx(1.0, abs=1e-12)


def test_beta_routes_agree():
    """The direct formula and inclusion-exclusion agree on random instances."""
    rng = np.random.default_rng(10)
    for _ in range(200):
        bs = _random_beta_set(rng, int(rng.integers(2, 6)), 15)
        t = int(rng.integers(0, bs.n))
        assert beta_pmax_direct(bs, t) == pytest.approx(beta_pmax_inclexcl(bs, t), abs=1e-9)


def test_beta_convolution_matches_nested_sum():
    """The convolution P_min equals the term-by-term nested sum."""
    rng = np.random.default_rng(11)
    for _ in range(100):
        bs = _random_beta_set(rng, int(rng.integers(2, 5)), 8)
        t = int(rng.integers(0, bs.n))
        assert beta_pmin(bs, t) == pytest.approx(beta_pmin(bs, t, naive=True), abs=1e-10)


def test_beta_two_actions_matches_pairwise():
    """With two actions P_max is the pairwise probability."""
    bs = BeliefSet.from_params("beta", [(4, 2), (3, 5)])
    assert beta_pmax_direct(bs, 0) == pytest.approx(beta_pairwise(4, 2, 3, 5), abs=1e-12)


@pytest.mark.parametrize("route", ["auto", "direct", "inclexcl"])
def test_beta_vectors_sum_to_one(route):
    """Every route yields a probability vector."""
    rng = np.random.default_rng(12)
    for _ in range(20):
        vec = beta_propensities(_random_beta_set(rng, int(rng.integers(2, 7)), 12), route)
        assert vec.probs.sum() == pytest.approx(1.0, abs=1e-9)


def test_beta_matches_monte_carlo():
    """Analytic Beta propensities agree with argmax frequencies."""
    rng = np.random.default_rng(13)
    for i in range(5):
        bs = _random_beta_set(rng, 5, 20)
        vec = beta_propensities(bs)
        mc = mc_propensities(bs, draws=200_000, rng_seed=i)
        assert np.all(np.abs(vec.probs - mc.probs) <= 4.0 * mc.std_err + 1e-4)


def test_beta_auto_route_choice():
    """AUTO picks the direct formula when Σβ ≤ Σα, else inclusion-exclusion for small n."""
    assert beta_propensities(BeliefSet.from_params("beta", [(9, 1), (8, 2)])).method is PropensityMethod.BETA_DIRECT
    assert beta_propensities(BeliefSet.from_params("beta", [(1, 9), (2, 8)])).method is PropensityMethod.BETA_INCL_EXCL
    many = BeliefSet.from_params("beta", [(1, 3)] * 11)
    vec = beta_propensities(many, BetaRoute.AUTO)
    assert vec.method is PropensityMethod.BETA_DIRECT
    np.testing.assert_allclose(vec.probs, 1.0 / 11.0, atol=1e-12)


def test_beta_guards():
    """Non-integer parameters and oversized inclusion-exclusion are rejected."""
    with pytest.raises(DomainError, match="integer"):
        beta_propensities(BeliefSet.from_params("beta", [(1.5, 1), (1, 1)]))
    with pytest.raises(SizeError):
        beta_pmax_inclexcl(BeliefSet.from_params("beta", [(1, 1)] * 21), 0)
    with pytest.raises(DomainError):
        beta_pairwise(0, 1, 1, 1)


# ---------------------------------------------------------------------------
# Generic quadrature and dispatch
# ---------------------------------------------------------------------------

def test_quadrature_matches_closed_forms():
    """Quadrature reproduces the Gaussian and Beta pairwise closed forms."""
    normal = BeliefSet.from_params("normal", [(0.4, 1.0), (0.0, 2.0)])
    expected = norm.cdf(0.4 / np.sqrt(3.0))
    assert quadrature_propensity(normal, 0, rel_tol=1e-9) == pytest.approx(expected, abs=1e-9)
    beta = BeliefSet.from_params("beta", [(3, 2), (2, 6)])
    assert quadrature_propensity(beta, 0, rel_tol=1e-9) == pytest.approx(beta_pairwise(3, 2, 2, 6), abs=1e-9)


def test_quadrature_real_beta_parameters():
    """Real Beta parameters go through quadrature and agree with Monte Carlo."""
    bs = BeliefSet.from_params("beta", [(1.5, 2.5), (2.2, 2.0), (0.7, 0.9)])
    vec = propensities(bs)
    assert vec.method is PropensityMethod.QUADRATURE
    assert vec.probs.sum() == pytest.approx(1.0, abs=1e-6)
    mc = mc_propensities(bs, draws=200_000, rng_seed=3)
    assert np.all(np.abs(vec.probs - mc.probs) <= 4.0 * mc.std_err + 1e-4)


def test_quadrature_lognormal_vector():
    """Quadrature on lognormal beliefs agrees with the trapezoid engine."""
    ln = BeliefSet.from_params("lognormal", [(0.0, 0.5), (0.2, 1.0), (-0.3, 0.2)])
    np.testing.assert_allclose(
        quadrature_propensities(ln, rel_tol=1e-9).probs, grid_propensities(ln).probs, atol=1e-8
    )


def test_quadrature_accuracy_error(monkeypatch):
    """An integral that misses its tolerance raises with the best estimate attached."""
    monkeypatch.setattr(propensity_module, "quad", lambda *args, **kwargs: (0.4, 0.1, {}))
    bs = BeliefSet.from_params("normal", [(0.0, 1.0), (0.0, 1.0)])
    with pytest.raises(AccuracyError) as excinfo:
        quadrature_propensity(bs, 0)
    assert excinfo.value.best_estimate == 0.4
    assert excinfo.value.abs_err == 0.1


def test_dispatch_routes():
    """propensities() picks the route from the belief kind."""
    cov = [[1.0, 0.5], [0.5, 1.0]]
    normal = BeliefSet.from_params("normal", [(0.0, 1.0), (0.2, 1.0)], cov)
    assert propensities(normal).method is PropensityMethod.GAUSSIAN_JOINT
    assert propensities(normal, joint=False).method is PropensityMethod.GAUSSIAN_MVN
    assert propensities(BeliefSet.from_params("beta", [(2, 1), (1, 1)])).method is PropensityMethod.BETA_DIRECT
    ln = BeliefSet.from_params("lognormal", [(0.0, 1.0), (0.2, 1.0)])
    assert propensities(ln).method is PropensityMethod.GAUSSIAN_MVN


def test_propensity_vector_is_read_only():
    """Returned probabilities cannot be modified in place."""
    vec = beta_propensities(BeliefSet.from_params("beta", [(2, 1), (1, 1)]))
    with pytest.raises(ValueError):
        vec.probs[0] = 0.0
    assert vec.to_dict()["method"] == "beta_direct"


# ---------------------------------------------------------------------------
# Invariants across routes
# ---------------------------------------------------------------------------

def test_beta_stochastic_dominance_monotone():
    """Raising α_t never lowers the target's propensity; raising β_t never raises it."""
    rng = np.random.default_rng(31)
    for _ in range(300):
        n = int(rng.integers(2, 6))
        params = [(int(a), int(b)) for a, b in rng.integers(1, 21, size=(n, 2))]
        base = beta_pmax_direct(BeliefSet.from_params("beta", params), 0)
        a0, b0 = params[0]
        more_alpha = beta_pmax_direct(BeliefSet.from_params("beta", [(a0 + 1, b0)] + params[1:]), 0)
        more_beta = beta_pmax_direct(BeliefSet.from_params("beta", [(a0, b0 + 1)] + params[1:]), 0)
        assert more_alpha >= base - 1e-12
        assert more_beta <= base + 1e-12


def test_separated_gaussians_are_certain():
    """A mean far above sharply concentrated rivals has propensity 1 on every route."""
    bs = BeliefSet.from_params(
        "normal", [(10.0, 0.01), (0.0, 0.01), (0.0, 0.01)], np.diag([0.01] * 3).tolist()
    )
    assert gaussian_propensity(bs, 0).value == pytest.approx(1.0, abs=1e-9)
    assert gaussian_propensity_joint(bs, 0).value == pytest.approx(1.0, abs=1e-9)
    assert gaussian_propensity_grid(bs, 0).value == pytest.approx(1.0, abs=1e-9)
    assert gaussian_propensity(bs, 1).value == pytest.approx(0.0, abs=1e-9)


def test_quadrature_matches_analytic_routes_six_actions():
    """With six actions, quadrature agrees with the Beta sums and the Gaussian engines."""
    rng = np.random.default_rng(41)
    for _ in range(5):
        beta = _random_beta_set(rng, 6, 10)
        np.testing.assert_allclose(
            quadrature_propensities(beta, rel_tol=1e-9).probs, beta_propensities(beta).probs, atol=1e-8
        )
        normal = _random_normal_set(rng, 6)
        quad_probs = quadrature_propensities(normal, rel_tol=1e-9).probs
        np.testing.assert_allclose(quad_probs, grid_propensities(normal).probs, atol=1e-8)
        np.testing.assert_allclose(
            quad_probs, gaussian_propensities(normal, target_abs_err=1e-6).probs, atol=1e-5
        )


def test_sharp_beta_posteriors():
    """Thousands of successes stay finite and consistent across routes."""
    bs = BeliefSet.from_params("beta", [(2000, 3), (1990, 5), (1995, 4)])
    direct = beta_propensities(bs, BetaRoute.DIRECT).probs
    inclexcl = beta_propensities(bs, BetaRoute.INCL_EXCL).probs
    assert np.all(np.isfinite(direct))
    np.testing.assert_allclose(direct, inclexcl, atol=1e-9)
    assert direct.sum() == pytest.approx(1.0, abs=1e-9)
    mc = mc_propensities(bs, draws=200_000, rng_seed=8)
    assert np.all(np.abs(direct - mc.probs) <= 4.0 * mc.std_err + 1e-4)
    assert beta_pairwise(2000, 3, 1990, 5) + beta_pairwise(1990, 5, 2000, 3) == pytest.approx(1.0, abs=1e-9)
