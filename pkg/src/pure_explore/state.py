"""Sequential learning state shared by all sampling policies."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .families import PosteriorState, RewardFamily


class UnsampledArmError(RuntimeError):
    """A statistic needing one observation per arm was requested too early."""


@dataclass
class BanditState:
    """Round counter plus per-arm counts and reward sums.

    The state is single-owner and updated in place by the simulation runner;
    conjugate posteriors are views over the same arrays, so posterior queries
    always reflect the latest observation.
    """

    family: RewardFamily
    t: int
    counts: np.ndarray
    sums: np.ndarray
    prior_a: float = 1.0
    prior_b: float = 1.0

    @classmethod
    def initial(cls, family: RewardFamily, n_arms: int,
                prior_a: float = 1.0, prior_b: float = 1.0) -> "BanditState":
        return cls(family, 0, np.zeros(n_arms), np.zeros(n_arms), prior_a, prior_b)

    @property
    def n_arms(self) -> int:
        return self.counts.shape[0]

    def apply(self, arm: int, reward: float) -> None:
        """Record one observed reward."""
        self.t += 1
        self.counts[arm] += 1.0
        self.sums[arm] += reward

    def means(self) -> np.ndarray:
        """Per-arm sample means; errors if any arm is unsampled."""
        if np.any(self.counts < 1):
            raise UnsampledArmError("sample means need at least one pull per arm")
        return self.sums / self.counts

    def allocation(self) -> np.ndarray:
        """Realized sampling proportions counts / t."""
        if self.t == 0:
            raise UnsampledArmError("allocation undefined before the first pull")
        return self.counts / self.t

    @property
    def posterior(self) -> PosteriorState:
        """Conjugate posterior view over the live count and sum arrays."""
        return PosteriorState(self.family, self.counts, self.sums, self.prior_a, self.prior_b)

    def empirical_top_k(self, k: int) -> np.ndarray:
        """Arms with the k largest sample means, ties to the lower index.

        Returned sorted ascending by arm index.
        """
        return top_k_arms(self.means(), k)


def top_k_arms(values: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest entries, ties to the lower index, sorted ascending."""
    order = np.argsort(-np.asarray(values), kind="stable")
    return np.sort(order[:k])
