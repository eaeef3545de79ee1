"""One-parameter exponential-family reward models.

Each bandit instance draws rewards from a single canonical exponential
family parameterized by its mean: Gaussian with known (per-arm) variance,
Bernoulli, or Poisson.  This module provides the mean-parameterized KL
divergence, the natural-parameter maps, reward sampling, and conjugate
posterior inference for all three families.

All numeric operations broadcast over numpy arrays so that callers can
evaluate whole batches of (arm, mean) combinations in one call.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import stats
from scipy.special import xlogy


class InvalidParameterError(ValueError):
    """A mean, reward, or hyperparameter lies outside its valid domain."""


class ImproperPosteriorError(RuntimeError):
    """A posterior quantity was requested before the posterior is proper."""


class FamilyKind(str, Enum):
    GAUSSIAN = "gaussian"
    BERNOULLI = "bernoulli"
    POISSON = "poisson"


#: Bernoulli means are clamped into [CLIP, 1 - CLIP] before natural-parameter
#: maps so that likelihood-ratio statistics stay finite.  Raw KL keeps the
#: exact 0*log(0) = 0 convention and is never clamped.
BERNOULLI_MEAN_CLIP = 1e-9


def _as_array(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


@dataclass(frozen=True)
class RewardFamily:
    """Reward distribution family shared by all arms of one instance.

    ``variances`` is only used by the Gaussian family and holds one known
    variance per arm; heterogeneous variances are supported.
    """

    kind: FamilyKind
    variances: np.ndarray | None = None

    def __post_init__(self):
        if self.kind == FamilyKind.GAUSSIAN:
            if self.variances is None:
                raise InvalidParameterError("Gaussian family requires per-arm variances")
            var = _as_array(self.variances)
            if var.ndim != 1 or var.size == 0 or not np.all(var > 0):
                raise InvalidParameterError("Gaussian variances must be positive")
            object.__setattr__(self, "variances", var)
        elif self.variances is not None:
            object.__setattr__(self, "variances", None)

    # -- constructors -------------------------------------------------

    @classmethod
    def gaussian(cls, sigma2, n_arms: int | None = None) -> "RewardFamily":
        """Gaussian rewards with known variance(s).

        ``sigma2`` may be a scalar (shared by ``n_arms`` arms) or a vector
        of per-arm variances.
        """
        var = _as_array(sigma2)
        if var.ndim == 0:
            if n_arms is None:
                raise InvalidParameterError("scalar variance needs n_arms")
            var = np.full(n_arms, float(var))
        return cls(FamilyKind.GAUSSIAN, var)

    @classmethod
    def bernoulli(cls) -> "RewardFamily":
        return cls(FamilyKind.BERNOULLI)

    @classmethod
    def poisson(cls) -> "RewardFamily":
        return cls(FamilyKind.POISSON)

    # -- domains -------------------------------------------------------

    def sigma2(self, arm):
        """Known variance of ``arm`` (Gaussian only); broadcasts over arrays."""
        if self.kind != FamilyKind.GAUSSIAN:
            raise InvalidParameterError(f"{self.kind.value} family has no known variance")
        return self.variances[arm]

    def validate_mean(self, theta, arm=None, closure: bool = False) -> None:
        """Raise :class:`InvalidParameterError` if a mean is out of domain.

        Domains: Gaussian any real, Bernoulli [0, 1], Poisson (0, inf).
        ``closure=True`` extends Poisson to [0, inf), which is where empirical
        means of plug-in statistics live.
        """
        th = _as_array(theta)
        if not np.all(np.isfinite(th)):
            raise InvalidParameterError("mean must be finite")
        if self.kind == FamilyKind.BERNOULLI and (np.any(th < 0) or np.any(th > 1)):
            raise InvalidParameterError("Bernoulli mean must lie in [0, 1]")
        if self.kind == FamilyKind.POISSON:
            if np.any(th < 0) or (not closure and np.any(th <= 0)):
                raise InvalidParameterError("Poisson mean must be positive")

    def clip_mean(self, theta):
        """Pull Bernoulli means off the boundary; identity for other families."""
        if self.kind == FamilyKind.BERNOULLI:
            return np.clip(theta, BERNOULLI_MEAN_CLIP, 1.0 - BERNOULLI_MEAN_CLIP)
        return _as_array(theta)

    # -- divergence and natural parameters ------------------------------

    def kl(self, arm, theta1, theta2, closure: bool = False):
        """KL divergence d(theta1, theta2) between two members of arm's family.

        Mean-parameterized and elementwise over broadcastable inputs.
        Bernoulli uses the exact 0*log(0) = 0 convention and returns ``inf``
        when ``theta2`` sits on the boundary away from ``theta1``.  Plug-in
        callers pass ``closure=True`` to admit boundary empirical means.
        """
        t1, t2 = _as_array(theta1), _as_array(theta2)
        self.validate_mean(t1, closure=closure)
        self.validate_mean(t2, closure=closure)
        if self.kind == FamilyKind.GAUSSIAN:
            return (t1 - t2) ** 2 / (2.0 * self.sigma2(arm))
        if self.kind == FamilyKind.BERNOULLI:
            with np.errstate(divide="ignore", invalid="ignore"):
                val = xlogy(t1, t1) - xlogy(t1, t2) + xlogy(1 - t1, 1 - t1) - xlogy(1 - t1, 1 - t2)
            return np.where(t1 == t2, 0.0, val)
        # Poisson
        with np.errstate(divide="ignore", invalid="ignore"):
            val = t2 - t1 + xlogy(t1, t1 / t2)
        return np.where(t1 == t2, 0.0, val)

    def nat_param(self, arm, theta):
        """Map a mean to its natural parameter; errors on non-finite results."""
        th = _as_array(theta)
        self.validate_mean(th)
        if self.kind == FamilyKind.GAUSSIAN:
            return th / self.sigma2(arm)
        if self.kind == FamilyKind.BERNOULLI:
            if np.any(th <= 0) or np.any(th >= 1):
                raise InvalidParameterError(
                    "Bernoulli natural parameter is infinite at the boundary; clip the mean first"
                )
            return np.log(th / (1.0 - th))
        return np.log(th)

    def mean_from_nat(self, arm, eta):
        """Inverse of :meth:`nat_param`."""
        e = _as_array(eta)
        if self.kind == FamilyKind.GAUSSIAN:
            return e * self.sigma2(arm)
        if self.kind == FamilyKind.BERNOULLI:
            return 1.0 / (1.0 + np.exp(-e))
        return np.exp(e)

    def log_partition(self, arm, eta):
        """Log-partition A(eta) of the canonical form, used in identity checks."""
        e = _as_array(eta)
        if self.kind == FamilyKind.GAUSSIAN:
            return e**2 * self.sigma2(arm) / 2.0
        if self.kind == FamilyKind.BERNOULLI:
            return np.logaddexp(0.0, e)
        return np.exp(e)

    # -- sampling --------------------------------------------------------

    def sample(self, arm, theta, rng: np.random.Generator, size=None):
        """Draw reward(s) from arm's distribution with mean ``theta``."""
        self.validate_mean(theta, arm)
        if self.kind == FamilyKind.GAUSSIAN:
            return rng.normal(theta, np.sqrt(self.sigma2(arm)), size=size)
        if self.kind == FamilyKind.BERNOULLI:
            draw = np.asarray(rng.random(size=size) < theta, dtype=np.float64)
        else:
            draw = np.asarray(rng.poisson(theta, size=size), dtype=np.float64)
        return draw if size is not None else float(draw)

    def validate_reward(self, arm, reward) -> None:
        r = _as_array(reward)
        if not np.all(np.isfinite(r)):
            raise InvalidParameterError("reward must be finite")
        if self.kind == FamilyKind.BERNOULLI and not np.all(np.isin(r, (0.0, 1.0))):
            raise InvalidParameterError("Bernoulli reward must be 0 or 1")
        if self.kind == FamilyKind.POISSON and (np.any(r < 0) or np.any(r != np.round(r))):
            raise InvalidParameterError("Poisson reward must be a nonnegative integer")


@dataclass
class PosteriorState:
    """Conjugate posterior over all arm means, tracked via sufficient stats.

    The posterior of every supported family is fully determined by per-arm
    observation counts and reward sums together with the prior
    hyperparameters, so those are what we store:

    * Gaussian: improper flat prior; posterior N(sum/count, sigma2/count),
      proper only once ``count >= 1``.
    * Bernoulli: Beta(a0 + sum, b0 + count - sum).
    * Poisson:  Gamma(shape0 + sum, rate0 + count).
    """

    family: RewardFamily
    counts: np.ndarray
    sums: np.ndarray
    prior_a: float = 1.0
    prior_b: float = 1.0

    @classmethod
    def prior(cls, family: RewardFamily, n_arms: int,
              prior_a: float = 1.0, prior_b: float = 1.0) -> "PosteriorState":
        if prior_a <= 0 or prior_b <= 0:
            raise InvalidParameterError("prior hyperparameters must be positive")
        if family.kind == FamilyKind.GAUSSIAN and family.variances.size != n_arms:
            raise InvalidParameterError("variance vector must match the number of arms")
        return cls(family, np.zeros(n_arms), np.zeros(n_arms), prior_a, prior_b)

    @property
    def n_arms(self) -> int:
        return self.counts.shape[0]

    def is_proper(self) -> bool:
        """Gaussian needs one observation per arm; Beta/Gamma priors are proper."""
        if self.family.kind == FamilyKind.GAUSSIAN:
            return bool(np.all(self.counts >= 1))
        return True

    def _require_proper(self) -> None:
        if not self.is_proper():
            raise ImproperPosteriorError(
                "Gaussian posterior is improper before each arm has an observation"
            )

    def updated(self, arm: int, reward: float) -> "PosteriorState":
        """Pure conjugate update: returns a new state with one more observation."""
        self.family.validate_reward(arm, reward)
        counts = self.counts.copy()
        sums = self.sums.copy()
        counts[arm] += 1
        sums[arm] += reward
        return PosteriorState(self.family, counts, sums, self.prior_a, self.prior_b)

    # -- per-arm hyperparameters --------------------------------------

    def beta_params(self):
        return self.prior_a + self.sums, self.prior_b + self.counts - self.sums

    def gamma_params(self):
        """Shape and rate of the Poisson-mean posterior."""
        return self.prior_a + self.sums, self.prior_b + self.counts

    def mean(self) -> np.ndarray:
        """Posterior mean of each arm's mean reward."""
        kind = self.family.kind
        if kind == FamilyKind.GAUSSIAN:
            self._require_proper()
            return self.sums / self.counts
        if kind == FamilyKind.BERNOULLI:
            a, b = self.beta_params()
            return a / (a + b)
        shape, rate = self.gamma_params()
        return shape / rate

    def variance(self) -> np.ndarray:
        kind = self.family.kind
        if kind == FamilyKind.GAUSSIAN:
            self._require_proper()
            return self.family.variances / self.counts
        if kind == FamilyKind.BERNOULLI:
            a, b = self.beta_params()
            return a * b / ((a + b) ** 2 * (a + b + 1))
        shape, rate = self.gamma_params()
        return shape / rate**2

    def sample(self, rng: np.random.Generator, size=None) -> np.ndarray:
        """Independent posterior draw of the full mean vector.

        With ``size=n`` returns an (n, n_arms) matrix of independent draws.
        """
        self._require_proper()
        kind = self.family.kind
        shape = self.n_arms if size is None else (size, self.n_arms)
        if kind == FamilyKind.GAUSSIAN:
            std = np.sqrt(self.family.variances / self.counts)
            return self.sums / self.counts + std * rng.standard_normal(shape)
        if kind == FamilyKind.BERNOULLI:
            a, b = self.beta_params()
            return rng.beta(np.broadcast_to(a, shape), np.broadcast_to(b, shape))
        sh, rate = self.gamma_params()
        return rng.gamma(np.broadcast_to(sh, shape), np.broadcast_to(1.0 / rate, shape))

    def _dist(self, arm: int):
        self._require_proper()
        kind = self.family.kind
        if kind == FamilyKind.GAUSSIAN:
            return stats.norm(self.sums[arm] / self.counts[arm],
                              np.sqrt(self.family.variances[arm] / self.counts[arm]))
        if kind == FamilyKind.BERNOULLI:
            a, b = self.beta_params()
            return stats.beta(a[arm], b[arm])
        sh, rate = self.gamma_params()
        return stats.gamma(sh[arm], scale=1.0 / rate[arm])

    def cdf(self, arm: int, x):
        return self._dist(arm).cdf(x)

    def pdf(self, arm: int, x):
        return self._dist(arm).pdf(x)

    def sf(self, arm: int, x):
        return self._dist(arm).sf(x)

    def logcdf(self, arm: int, x):
        return self._dist(arm).logcdf(x)

    def support_window(self, n_std: float = 10.0) -> tuple[float, float]:
        """Interval carrying essentially all posterior mass, for quadrature.

        Union over arms of mean +/- ``n_std`` posterior standard deviations,
        intersected with the family's support.
        """
        m, v = self.mean(), self.variance()
        lo = float(np.min(m - n_std * np.sqrt(v)))
        hi = float(np.max(m + n_std * np.sqrt(v)))
        if self.family.kind == FamilyKind.BERNOULLI:
            return max(lo, 0.0), min(hi, 1.0)
        if self.family.kind == FamilyKind.POISSON:
            return max(lo, 0.0), hi
        return lo, hi


def posterior_update(state: PosteriorState, arm: int, reward: float) -> PosteriorState:
    """Functional alias for :meth:`PosteriorState.updated`."""
    return state.updated(arm, reward)
