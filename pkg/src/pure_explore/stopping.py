"""Stopping statistics and thresholds for the fixed-confidence setting.

The stopping statistic is the generalized likelihood ratio between the
current empirical top-k ranking and its complement: the empirical evidence,
in nats, that the recommended set is correct.  Stopping compares it to a
confidence-dependent threshold.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .costs import pair_transport_cost
from .instance import InstanceSpec
from .state import BanditState, UnsampledArmError, top_k_arms

#: Replications are aborted with a distinct cap-hit outcome after this many
#: rounds, so a mis-tuned configuration cannot hang a sweep.
DEFAULT_ROUND_CAP = 10_000_000


@dataclass(frozen=True)
class StoppingConfig:
    """Confidence level and threshold family.

    ``kind="heuristic"`` uses log((log t + 1) / delta), the practical choice.
    ``kind="theoretical"`` uses log(c * t**alpha / delta), whose correctness
    constant c = c(alpha, K) is not known in closed form; the default c = 1 is
    therefore itself heuristic, and callers get a ValueError only for
    structurally invalid parameters.
    """

    delta: float
    kind: str = "heuristic"
    c: float = 1.0
    alpha: float = 2.0
    round_cap: int = DEFAULT_ROUND_CAP

    def __post_init__(self):
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")
        if self.kind not in ("heuristic", "theoretical"):
            raise ValueError(f"unknown threshold kind {self.kind!r}")
        if self.kind == "theoretical" and (self.alpha <= 1.0 or self.c <= 0.0):
            raise ValueError("theoretical threshold needs alpha > 1 and c > 0")


def threshold(config: StoppingConfig, t: int) -> float:
    """Evidence threshold at round t."""
    if config.kind == "heuristic":
        return float(np.log((np.log(t) + 1.0) / config.delta))
    return float(np.log(config.c * t**config.alpha / config.delta))


def glr_statistic(state: BanditState, k: int) -> tuple[float, tuple[int, int]]:
    """Generalized likelihood ratio evidence for the empirical top-k split.

    Equals the minimum over (empirical top, empirical bottom) pairs of the
    count-weighted divergence to the pair's pooled mean; by construction this
    is t times the worst pair rate of the plug-in instance at the realized
    allocation.  Returns the statistic and the minimizing pair.
    """
    if np.any(state.counts < 1):
        raise UnsampledArmError("the stopping statistic needs one pull per arm")
    means = state.means()
    top = top_k_arms(means, k)
    mask = np.zeros(state.n_arms, dtype=bool)
    mask[top] = True
    bottom = np.nonzero(~mask)[0]
    pi = np.repeat(top, bottom.size)
    pj = np.tile(bottom, top.size)
    z = pair_transport_cost(state.family, pi, pj, means[pi], means[pj],
                            state.counts[pi], state.counts[pj])
    pos = int(np.argmin(z))
    return float(z[pos]), (int(pi[pos]), int(pj[pos]))


def should_stop(state: BanditState, k: int, config: StoppingConfig) -> bool:
    """True once the evidence strictly exceeds the round-t threshold."""
    z, _ = glr_statistic(state, k)
    return z > threshold(config, max(state.t, 1))


def gaps_and_complexity(instance: InstanceSpec) -> tuple[np.ndarray, float]:
    """Per-arm boundary gaps and the inverse-square-gap complexity sum.

    A top arm's gap is its margin over the best bottom mean; a bottom arm's
    gap is its margin below the worst top mean.  The complexity sum
    H = sum(1 / gap**2) is what budget-mode baselines expect as input.
    """
    theta = instance.theta
    top, bottom = instance.top_arms, instance.bottom_arms
    weakest_top = float(np.min(theta[top]))
    strongest_bottom = float(np.max(theta[bottom]))
    gaps = np.empty(instance.n_arms)
    gaps[top] = theta[top] - strongest_bottom
    gaps[bottom] = weakest_top - theta[bottom]
    if np.any(gaps <= 0):
        raise ValueError("boundary gaps must be positive (unique top-k set required)")
    return gaps, float(np.sum(gaps**-2.0))
