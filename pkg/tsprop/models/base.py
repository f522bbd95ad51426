from abc import ABC, abstractmethod

import numpy as np


class BasePolicy(ABC):
    def __init__(self, n_actions: int):
        self.n_actions = n_actions

    @abstractmethod
    def action_probs(self, contexts: np.ndarray, jobs: int = 1) -> np.ndarray:
        """
        Selection probabilities of every action.

        Args:
            contexts (np.ndarray): (m, d) context vectors.
            jobs (int): worker threads; the result does not depend on it.

        Returns:
            np.ndarray: (m, n_actions) rows summing to one.
        """
        pass

    @abstractmethod
    def sample_actions(self, contexts: np.ndarray, draws: int, rng_seed: int) -> np.ndarray:
        """
        Draw actions from the policy.

        Returns:
            np.ndarray: (m, draws) action indices, deterministic given rng_seed.
        """
        pass

    def propensities_of(self, contexts: np.ndarray, actions: np.ndarray, jobs: int = 1) -> np.ndarray:
        """π(a_i | x_i) for each row; subclasses may avoid computing the full vectors."""
        probs = self.action_probs(contexts, jobs=jobs)
        return probs[np.arange(probs.shape[0]), np.asarray(actions, dtype=int)]
