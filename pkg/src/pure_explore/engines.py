"""Vectorized replication engines for the large sweep experiments.

Stepping tens of thousands of replications one Python call at a time is far
too slow for the fixed-budget and fixed-confidence sweeps, so the two
policies those sweeps compare (round-robin and stationarity-tracking
Thompson sampling) also have batched engines that advance every replication
in lockstep with whole-matrix numpy operations.

The batched engines are statistically equivalent to the scalar runner (the
test suite cross-checks them) but draw from one master generator per batch
rather than one stream per replication, so per-replication trajectories are
not reproducible across engine choices.  Outputs are deterministic given
(seed, replications).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .costs import pair_budget_rate, pair_transport_cost
from .families import FamilyKind, RewardFamily
from .instance import InstanceSpec
from .stopping import StoppingConfig, threshold

#: Policies the batched engines can simulate, per setting.
BATCH_CONFIDENCE_POLICIES = ("uniform", "kkt-ts")
BATCH_BUDGET_POLICIES = ("uniform", "kkt-ts", "kkt-ts-budget")


def sample_reward_matrix(family: RewardFamily, theta: np.ndarray,
                         rng: np.random.Generator, shape) -> np.ndarray:
    """One reward per (replication, arm) cell; ``theta`` broadcasts over rows."""
    if family.kind == FamilyKind.GAUSSIAN:
        return theta + np.sqrt(family.variances) * rng.standard_normal(shape)
    if family.kind == FamilyKind.BERNOULLI:
        return (rng.random(shape) < theta).astype(np.float64)
    return rng.poisson(np.broadcast_to(theta, shape)).astype(np.float64)


def _sample_rewards_for(family: RewardFamily, theta: np.ndarray, arms: np.ndarray,
                        rng: np.random.Generator) -> np.ndarray:
    """One reward per row, row r pulling ``arms[r]``."""
    mean = theta[arms]
    if family.kind == FamilyKind.GAUSSIAN:
        return mean + np.sqrt(family.variances[arms]) * rng.standard_normal(arms.shape[0])
    if family.kind == FamilyKind.BERNOULLI:
        return (rng.random(arms.shape[0]) < mean).astype(np.float64)
    return rng.poisson(mean).astype(np.float64)


def _posterior_draw(family: RewardFamily, counts: np.ndarray, sums: np.ndarray,
                    rng: np.random.Generator) -> np.ndarray:
    if family.kind == FamilyKind.GAUSSIAN:
        return sums / counts + np.sqrt(family.variances / counts) * rng.standard_normal(counts.shape)
    if family.kind == FamilyKind.BERNOULLI:
        return rng.beta(1.0 + sums, 1.0 + counts - sums)
    return rng.gamma(1.0 + sums, 1.0 / (1.0 + counts))


def _split_by_value(values: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise (top-k, rest) index split of a value matrix."""
    part = np.argpartition(-values, k - 1, axis=1)
    return part[:, :k], part[:, k:]


def _pair_stats(family: RewardFamily, values: np.ndarray, weights: np.ndarray,
                idx_top: np.ndarray, idx_bot: np.ndarray, mode: str):
    """Pair rates and top-arm shares for every row's (top x bottom) grid."""
    v_top = np.take_along_axis(values, idx_top, axis=1)[:, :, None]
    v_bot = np.take_along_axis(values, idx_bot, axis=1)[:, None, :]
    w_top = np.take_along_axis(weights, idx_top, axis=1)[:, :, None]
    w_bot = np.take_along_axis(weights, idx_bot, axis=1)[:, None, :]
    kernel = pair_transport_cost if mode == "confidence" else pair_budget_rate
    rates, part_top, _ = kernel(family, idx_top[:, :, None], idx_bot[:, None, :],
                                v_top, v_bot, w_top, w_bot, return_parts=True)
    return rates, part_top


def _kkt_ts_pulls(instance: InstanceSpec, counts: np.ndarray, sums: np.ndarray,
                  t: int, mode: str, rng: np.random.Generator) -> np.ndarray:
    """One stationarity-tracking Thompson pull per row, fully vectorized."""
    fam = instance.family
    tilde = _posterior_draw(fam, counts, sums, rng)
    coins = rng.random(counts.shape[0])
    idx_top, idx_bot = _split_by_value(tilde, instance.k)
    rates, part_top = _pair_stats(fam, tilde, counts / t, idx_top, idx_bot, mode)
    flat = rates.reshape(rates.shape[0], -1)
    pos = np.argmin(flat, axis=1)
    rows = np.arange(counts.shape[0])
    best_rate = flat[rows, pos]
    share = part_top.reshape(flat.shape)[rows, pos]
    with np.errstate(invalid="ignore", divide="ignore"):
        frac = np.where(best_rate > 0, share / np.where(best_rate > 0, best_rate, 1.0), 0.5)
    n_bot = idx_bot.shape[1]
    top_arm = np.take_along_axis(idx_top, (pos // n_bot)[:, None], axis=1)[:, 0]
    bot_arm = np.take_along_axis(idx_bot, (pos % n_bot)[:, None], axis=1)[:, 0]
    return np.where(coins < frac, top_arm, bot_arm)


def _glr_values(instance: InstanceSpec, counts: np.ndarray, sums: np.ndarray) -> np.ndarray:
    """Row-wise likelihood-ratio stopping statistic at the empirical split."""
    means = sums / counts
    idx_top, idx_bot = _split_by_value(means, instance.k)
    rates, _ = _pair_stats(instance.family, means, counts, idx_top, idx_bot, "confidence")
    return rates.reshape(rates.shape[0], -1).min(axis=1)


def _is_correct(instance: InstanceSpec, counts: np.ndarray, sums: np.ndarray) -> np.ndarray:
    """Does each row's empirical top-k match the true top set?

    Membership is checked by mean threshold, which inherits numpy's argpartition
    tie behavior; exact mean ties across the boundary are vanishingly rare and
    scored as incorrect unless the partition happens to pick the true set.
    """
    means = sums / counts
    idx_top, _ = _split_by_value(means, instance.k)
    mask = np.zeros(means.shape, dtype=bool)
    np.put_along_axis(mask, idx_top, True, axis=1)
    want = np.zeros(means.shape[1], dtype=bool)
    want[instance.top_arms] = True
    return (mask == want).all(axis=1)


@dataclass
class ConfidenceBatchResult:
    tau: np.ndarray
    correct: np.ndarray
    capped: np.ndarray


def run_confidence_batch(instance: InstanceSpec, policy_kind: str,
                         stop_config: StoppingConfig, replications: int,
                         seed_seq: np.random.SeedSequence) -> ConfidenceBatchResult:
    """Run all replications of one policy to their stopping times, in lockstep.

    Rows that stop are compacted out of the batch; the returned arrays are
    indexed by the original replication order.
    """
    if policy_kind not in BATCH_CONFIDENCE_POLICIES:
        raise ValueError(f"no batched confidence engine for {policy_kind!r}")
    rng = np.random.default_rng(seed_seq)
    fam, n, k = instance.family, instance.n_arms, instance.k
    counts = np.ones((replications, n))
    sums = sample_reward_matrix(fam, instance.theta, rng, (replications, n))
    alive = np.arange(replications)
    tau = np.zeros(replications, dtype=np.int64)
    correct = np.zeros(replications, dtype=bool)
    capped = np.zeros(replications, dtype=bool)
    t = n
    while alive.size and t < stop_config.round_cap:
        z = _glr_values(instance, counts, sums)
        stop = z > threshold(stop_config, t)
        if stop.any():
            done = alive[stop]
            tau[done] = t
            correct[done] = _is_correct(instance, counts[stop], sums[stop])
            keep = ~stop
            alive, counts, sums = alive[keep], counts[keep], sums[keep]
            if not alive.size:
                break
        if policy_kind == "uniform":
            arm = t % n
            counts[:, arm] += 1.0
            sums[:, arm] += _sample_rewards_for(
                fam, instance.theta, np.full(alive.size, arm, dtype=np.intp), rng)
        else:
            arms = _kkt_ts_pulls(instance, counts, sums, t, "confidence", rng)
            rewards = _sample_rewards_for(fam, instance.theta, arms, rng)
            rows = np.arange(alive.size)
            counts[rows, arms] += 1.0
            sums[rows, arms] += rewards
        t += 1
    if alive.size:
        tau[alive] = t
        capped[alive] = True
        correct[alive] = _is_correct(instance, counts, sums)
    return ConfidenceBatchResult(tau, correct, capped)


@dataclass
class BudgetBatchResult:
    #: per budget: boolean correctness per replication and the across-replication
    #: mean of the final sampling proportions
    correct: dict[int, np.ndarray]
    mean_allocation: dict[int, np.ndarray]


def run_budget_batch(instance: InstanceSpec, policy_kind: str, budgets,
                     replications: int,
                     seed_seq: np.random.SeedSequence) -> BudgetBatchResult:
    """Advance all replications to the largest budget, snapshotting at each one.

    Round-robin pulls need no per-round decisions, so the uniform policy is
    simulated exactly through its sufficient statistics: per-arm pull counts
    are deterministic and the reward sums are drawn in one shot per budget
    increment from the matching aggregate distribution.
    """
    if policy_kind not in BATCH_BUDGET_POLICIES:
        raise ValueError(f"no batched budget engine for {policy_kind!r}")
    budgets = sorted(int(b) for b in budgets)
    if budgets[0] < instance.n_arms:
        raise ValueError("budgets must cover at least one pull per arm")
    rng = np.random.default_rng(seed_seq)
    fam, n = instance.family, instance.n_arms
    correct: dict[int, np.ndarray] = {}
    mean_alloc: dict[int, np.ndarray] = {}
    if policy_kind == "uniform":
        counts = np.zeros(n)
        sums = np.zeros((replications, n))
        for budget in budgets:
            target = np.bincount(np.arange(budget) % n, minlength=n).astype(np.float64)
            extra = target - counts
            sums += _aggregate_rewards(fam, instance.theta, extra, replications, rng)
            counts = target
            batch = np.broadcast_to(counts, (replications, n))
            correct[budget] = _is_correct(instance, batch, sums)
            mean_alloc[budget] = counts / budget
        return BudgetBatchResult(correct, mean_alloc)

    mode = "confidence" if policy_kind == "kkt-ts" else "budget"
    counts = np.ones((replications, n))
    sums = sample_reward_matrix(fam, instance.theta, rng, (replications, n))
    t = n
    for budget in budgets:
        while t < budget:
            arms = _kkt_ts_pulls(instance, counts, sums, t, mode, rng)
            rewards = _sample_rewards_for(fam, instance.theta, arms, rng)
            rows = np.arange(replications)
            counts[rows, arms] += 1.0
            sums[rows, arms] += rewards
            t += 1
        correct[budget] = _is_correct(instance, counts, sums)
        mean_alloc[budget] = counts.mean(axis=0) / budget
    return BudgetBatchResult(correct, mean_alloc)


def _aggregate_rewards(family: RewardFamily, theta: np.ndarray, extra: np.ndarray,
                       replications: int, rng: np.random.Generator) -> np.ndarray:
    """Sum of ``extra[arm]`` fresh rewards per arm, drawn in aggregate."""
    shape = (replications, theta.size)
    if family.kind == FamilyKind.GAUSSIAN:
        return extra * theta + np.sqrt(extra * family.variances) * rng.standard_normal(shape)
    if family.kind == FamilyKind.BERNOULLI:
        return rng.binomial(extra.astype(np.int64), theta, size=shape).astype(np.float64)
    return rng.poisson(extra * theta, size=shape).astype(np.float64)
