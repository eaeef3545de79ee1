"""Problem instances and validation helpers for allocations and pair weights."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .families import FamilyKind, InvalidParameterError, RewardFamily

SIMPLEX_ATOL = 1e-9


class InvalidInstanceError(ValueError):
    """The instance violates a structural requirement (e.g. tied top-k boundary)."""


@dataclass(frozen=True)
class InstanceSpec:
    """A top-k identification problem: reward family, true means, and k.

    The top-k set must be unique: the smallest top mean strictly exceeds the
    largest bottom mean.  Ties inside the top or bottom set are allowed.
    Set ``strict=False`` for plug-in instances built from estimated means,
    where exact boundary ties are tolerated (tie-break by lower arm index).
    """

    family: RewardFamily
    theta: np.ndarray
    k: int
    strict: bool = field(default=True, compare=False)

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=np.float64)
        object.__setattr__(self, "theta", theta)
        if theta.ndim != 1 or theta.size < 2:
            raise InvalidInstanceError("theta must be a vector of at least two means")
        if not (1 <= self.k < theta.size):
            raise InvalidInstanceError(f"k must satisfy 1 <= k < K, got k={self.k}, K={theta.size}")
        if self.family.kind == FamilyKind.GAUSSIAN and self.family.variances.size != theta.size:
            raise InvalidInstanceError("per-arm variance vector must match theta length")
        try:
            self.family.validate_mean(theta)
        except InvalidParameterError as exc:
            raise InvalidInstanceError(str(exc)) from exc
        order = np.argsort(-theta, kind="stable")
        if self.strict and theta[order[self.k - 1]] <= theta[order[self.k]]:
            raise InvalidInstanceError("top-k set is not unique (tied boundary means)")
        object.__setattr__(self, "_order", order)

    @classmethod
    def plugin(cls, family: RewardFamily, theta, k: int) -> "InstanceSpec":
        """Lenient constructor for solver calls on estimated or sampled means."""
        return cls(family, theta, k, strict=False)

    @property
    def n_arms(self) -> int:
        return self.theta.size

    @property
    def top_arms(self) -> np.ndarray:
        """Indices of the k largest means, sorted ascending by arm index."""
        return np.sort(self._order[: self.k])

    @property
    def bottom_arms(self) -> np.ndarray:
        return np.sort(self._order[self.k:])

    @property
    def n_pairs(self) -> int:
        return self.k * (self.n_arms - self.k)

    def pairs(self) -> tuple[np.ndarray, np.ndarray]:
        """Canonical (top, bottom) pair enumeration, lexicographic by arm index.

        Returns index vectors (pi, pj) of length k*(K-k); pair weights and
        pair-cost vectors throughout the package follow this ordering.
        """
        top, bot = self.top_arms, self.bottom_arms
        pi = np.repeat(top, bot.size)
        pj = np.tile(bot, top.size)
        return pi, pj

    def pair_list(self) -> list[tuple[int, int]]:
        pi, pj = self.pairs()
        return list(zip(pi.tolist(), pj.tolist()))


def check_allocation(psi, n_arms: int | None = None, atol: float = SIMPLEX_ATOL) -> np.ndarray:
    """Validate a sampling allocation: nonnegative, sums to one."""
    v = np.asarray(psi, dtype=np.float64)
    if v.ndim != 1 or (n_arms is not None and v.size != n_arms):
        raise InvalidParameterError(f"allocation must be a length-{n_arms} vector")
    if np.any(v < -atol) or abs(float(v.sum()) - 1.0) > atol:
        raise InvalidParameterError("allocation must be a point on the probability simplex")
    return np.maximum(v, 0.0)


def check_pair_weights(mu, n_pairs: int, atol: float = SIMPLEX_ATOL) -> np.ndarray:
    """Validate dual weights over top/bottom pairs: a simplex point of length k*(K-k)."""
    v = np.asarray(mu, dtype=np.float64)
    if v.ndim != 1 or v.size != n_pairs:
        raise InvalidParameterError(f"pair weights must be a length-{n_pairs} vector")
    if np.any(v < -atol) or abs(float(v.sum()) - 1.0) > atol:
        raise InvalidParameterError("pair weights must be a point on the probability simplex")
    return np.maximum(v, 0.0)


def as_allocation(psi, n_arms: int | None = None, atol: float = 1e-3) -> np.ndarray:
    """Lenient boundary validator: accept rounded input and rescale exactly.

    External allocations (files, published values) are often rounded to a few
    decimals; this accepts anything nonnegative whose sum is within ``atol``
    of one and normalizes it onto the simplex.
    """
    v = np.asarray(psi, dtype=np.float64)
    if v.ndim != 1 or (n_arms is not None and v.size != n_arms):
        raise InvalidParameterError(f"allocation must be a length-{n_arms} vector")
    total = float(v.sum())
    if np.any(v < -SIMPLEX_ATOL) or abs(total - 1.0) > atol:
        raise InvalidParameterError("allocation must be a point on the probability simplex")
    return np.maximum(v, 0.0) / total


def uniform_allocation(n_arms: int) -> np.ndarray:
    return np.full(n_arms, 1.0 / n_arms)


def uniform_pair_weights(n_pairs: int) -> np.ndarray:
    return np.full(n_pairs, 1.0 / n_pairs)
