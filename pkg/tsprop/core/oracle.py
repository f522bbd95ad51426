"""Monte-Carlo argmax frequencies: the brute-force ground truth for propensities."""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np

from tsprop.models.beliefs import BeliefSet, LinearGaussianPosterior, psd_factor, sample_rewards
from tsprop.utils.logger import get_logger
from tsprop.utils.seeding import child_rng, derive_seed
from tsprop.utils.validators import check_positive_int

logger = get_logger(__name__)

MC_CHUNK_DRAWS = 2 ** 16


@dataclass(frozen=True)
class McEstimate:
    probs: np.ndarray
    draws: int
    std_err: np.ndarray


def argmax_random_ties(values: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Argmax over the last axis; ties broken uniformly at random."""
    is_max = values == values.max(axis=-1, keepdims=True)
    keys = np.where(is_max, rng.random(values.shape), -1.0)
    return keys.argmax(axis=-1)


def _tally(
    n: int,
    draws: int,
    rng_seed: int,
    sample_chunk: Callable[[int, int], np.ndarray],
    jobs: int,
) -> McEstimate:
    draws = check_positive_int(draws, "draws")
    jobs = check_positive_int(jobs, "jobs")
    bounds = [(c, min(MC_CHUNK_DRAWS, draws - start))
              for c, start in enumerate(range(0, draws, MC_CHUNK_DRAWS))]

    def run(chunk: int, size: int) -> np.ndarray:
        chunk_seed = derive_seed(rng_seed, "mc-chunk", chunk)
        values = sample_chunk(chunk_seed, size)
        winners = argmax_random_ties(values, child_rng(chunk_seed, 1))
        return np.bincount(winners, minlength=n)

    if jobs == 1 or len(bounds) == 1:
        counts = [run(c, m) for c, m in bounds]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            counts = list(pool.map(lambda cm: run(*cm), bounds))

    total = np.sum(counts, axis=0)
    probs = total / draws
    std_err = np.sqrt(probs * (1.0 - probs) / draws)
    logger.debug("Monte-Carlo tally n=%d draws=%d chunks=%d", n, draws, len(bounds))
    return McEstimate(probs, draws, std_err)


def mc_propensities(
    belief_set: BeliefSet, draws: int, rng_seed: int = 0, jobs: int = 1
) -> McEstimate:
    """
    Empirical argmax frequencies of reward draws from `belief_set`.

    Draws are split into fixed chunks, each with its own derived seed, so the
    result does not depend on `jobs`.
    """
    return _tally(
        belief_set.n, draws, rng_seed,
        lambda seed, size: sample_rewards(belief_set, seed, size=size),
        jobs,
    )


def mc_propensities_param(
    post: LinearGaussianPosterior, draws: int, rng_seed: int = 0, jobs: int = 1
) -> McEstimate:
    """Sample θ̃ ~ N(μ_θ, Σ_θ), score every action as θ̃ᵀf_a and tally the argmax."""
    factor = psd_factor(post.cov)

    def sample(seed: int, size: int) -> np.ndarray:
        z = np.random.default_rng(seed).standard_normal((size, post.d))
        theta = post.mean + z @ factor.T
        return theta @ post.features.T

    return _tally(post.n, draws, rng_seed, sample, jobs)
