from tsprop.exceptions import (
    AccuracyError,
    DomainError,
    FitError,
    InputError,
    NumericalError,
    TsPropError,
)
from tsprop.models.beliefs import BeliefSet, LinearGaussianPosterior, RewardBelief, posterior_to_outcome
from tsprop.core.mvncdf import MvnProblem, mvn_cdf
from tsprop.core.propensity import (
    PropensityVector,
    beta_pairwise,
    beta_propensities,
    gaussian_propensity,
    gaussian_propensity_joint,
    lognormal_propensity,
    propensities,
    quadrature_propensity,
)
from tsprop.core.oracle import mc_propensities, mc_propensities_param
from tsprop.models.blr import BayesLogReg, fit_blr
from tsprop.models.policy import ThompsonSamplingPolicy, ts_beliefs
from tsprop.ope.dataset import LoggedDataset
from tsprop.ope.estimators import EstimateReport, beta_ips, ips, snips
from tsprop.ope.target import target_propensities_for_log
from tsprop.sim.environment import EnvConfig, Environment, generate_log, true_value
from tsprop.version import __version__
