"""Pairwise discrimination rates between top and bottom arms.

For an allocation ``psi``, the transport cost of a (top, bottom) pair is the
large-deviation rate at which samples separate the two arms,

    cost(i, j) = psi_i * d(theta_i, tilted) + psi_j * d(theta_j, tilted),

where ``tilted`` is the mean that minimizes the weighted divergence sum.  The
budget-mode analogue swaps the divergence arguments and tilts in the natural
parameter instead.  The worst pair rate (the minimum over all pairs) is the
objective that every solver in this package maximizes.

All kernels broadcast over numpy arrays; the scalar per-pair operations are
thin wrappers used for checks and reports.
"""
from __future__ import annotations

import numpy as np

from .families import FamilyKind, RewardFamily
from .instance import InstanceSpec


class DegeneratePairError(ValueError):
    """Both allocations of a pair are zero where a tilted mean or gradient is needed."""


# -- array kernels ------------------------------------------------------


def pair_tilted_mean(family: RewardFamily, arm_a, arm_b, theta_a, theta_b, psi_a, psi_b):
    """Mean minimizing psi_a*d(theta_a, x) + psi_b*d(theta_b, x), elementwise.

    For one shared family this is the allocation-weighted average of the two
    means; heterogeneous Gaussian variances weight by precision as well.
    Entries with psi_a + psi_b = 0 return NaN; callers decide how to treat
    those degenerate pairs.
    """
    theta_a, theta_b = np.asarray(theta_a, float), np.asarray(theta_b, float)
    psi_a, psi_b = np.asarray(psi_a, float), np.asarray(psi_b, float)
    if family.kind == FamilyKind.GAUSSIAN:
        wa = psi_a / family.sigma2(arm_a)
        wb = psi_b / family.sigma2(arm_b)
    else:
        wa, wb = psi_a, psi_b
    s = wa + wb
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(s > 0, (wa * theta_a + wb * theta_b) / np.where(s > 0, s, 1.0), np.nan)


def _gaussian_pair_cost(family: RewardFamily, arm_a, arm_b, theta_a, theta_b,
                        psi_a, psi_b, return_parts: bool):
    """Fused closed form of the Gaussian pair cost (identical to the generic path)."""
    wa = psi_a / family.sigma2(arm_a)
    wb = psi_b / family.sigma2(arm_b)
    s = wa + wb
    delta_sq = (theta_a - theta_b) ** 2
    with np.errstate(invalid="ignore", divide="ignore"):
        safe = np.where(s > 0, s, 1.0)
        cost = np.where(s > 0, 0.5 * delta_sq * wa * wb / safe, 0.0)
        if not return_parts:
            return cost
        part_a = np.where(s > 0, cost * wb / safe, 0.0)
        part_b = cost - part_a
    return cost, part_a, part_b


def pair_transport_cost(family: RewardFamily, arm_a, arm_b, theta_a, theta_b, psi_a, psi_b,
                        return_parts: bool = False):
    """Transport cost of (top, bottom) pairs, elementwise; degenerate pairs give 0.

    With ``return_parts`` also returns the two weighted divergence terms,
    from which sampling fractions follow directly.
    """
    theta_a, theta_b = np.asarray(theta_a, float), np.asarray(theta_b, float)
    psi_a, psi_b = np.asarray(psi_a, float), np.asarray(psi_b, float)
    if family.kind == FamilyKind.GAUSSIAN:
        return _gaussian_pair_cost(family, arm_a, arm_b, theta_a, theta_b,
                                   psi_a, psi_b, return_parts)
    bar = pair_tilted_mean(family, arm_a, arm_b, theta_a, theta_b, psi_a, psi_b)
    degenerate = ~np.isfinite(bar)
    bar = np.where(degenerate, theta_a, bar)
    with np.errstate(invalid="ignore"):
        part_a = np.where(psi_a > 0, psi_a * family.kl(arm_a, theta_a, bar, closure=True), 0.0)
        part_b = np.where(psi_b > 0, psi_b * family.kl(arm_b, theta_b, bar, closure=True), 0.0)
    part_a = np.where(degenerate, 0.0, part_a)
    part_b = np.where(degenerate, 0.0, part_b)
    cost = part_a + part_b
    if return_parts:
        return cost, part_a, part_b
    return cost


def pair_sampling_fraction(family: RewardFamily, arm_a, arm_b, theta_a, theta_b, psi_a, psi_b):
    """Share of a pair's discrimination effort carried by the top arm.

    Defined as the top arm's weighted divergence over the pair cost; the two
    shares of a pair always sum to one.  Pairs with zero cost return 1/2.
    """
    cost, part_a, _ = pair_transport_cost(
        family, arm_a, arm_b, theta_a, theta_b, psi_a, psi_b, return_parts=True
    )
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(cost > 0, part_a / np.where(cost > 0, cost, 1.0), 0.5)


def pair_budget_tilted_mean(family: RewardFamily, arm_a, arm_b, theta_a, theta_b, psi_a, psi_b):
    """Mean minimizing psi_a*d(x, theta_a) + psi_b*d(x, theta_b) (budget mode).

    The minimizer averages the natural parameters with allocation weights.
    For Gaussian rewards it coincides with :func:`pair_tilted_mean`.
    """
    theta_a, theta_b = np.asarray(theta_a, float), np.asarray(theta_b, float)
    psi_a, psi_b = np.asarray(psi_a, float), np.asarray(psi_b, float)
    if family.kind == FamilyKind.GAUSSIAN:
        return pair_tilted_mean(family, arm_a, arm_b, theta_a, theta_b, psi_a, psi_b)
    eta_a = family.nat_param(arm_a, family.clip_mean(theta_a))
    eta_b = family.nat_param(arm_b, family.clip_mean(theta_b))
    s = psi_a + psi_b
    with np.errstate(invalid="ignore", divide="ignore"):
        eta_bar = np.where(s > 0, (psi_a * eta_a + psi_b * eta_b) / np.where(s > 0, s, 1.0), np.nan)
    ok = np.isfinite(eta_bar)
    mean = family.mean_from_nat(arm_a, np.where(ok, eta_bar, 0.0))
    return np.where(ok, mean, np.nan)


def pair_budget_rate(family: RewardFamily, arm_a, arm_b, theta_a, theta_b, psi_a, psi_b,
                     return_parts: bool = False):
    """Fixed-budget discrimination rate of pairs; degenerate pairs give 0."""
    theta_a, theta_b = np.asarray(theta_a, float), np.asarray(theta_b, float)
    psi_a, psi_b = np.asarray(psi_a, float), np.asarray(psi_b, float)
    if family.kind == FamilyKind.GAUSSIAN:
        # the two tilted means coincide for Gaussian rewards and the
        # divergence is symmetric, so the budget rate equals the transport cost
        return _gaussian_pair_cost(family, arm_a, arm_b, theta_a, theta_b,
                                   psi_a, psi_b, return_parts)
    bar = pair_budget_tilted_mean(family, arm_a, arm_b, theta_a, theta_b, psi_a, psi_b)
    degenerate = ~np.isfinite(bar)
    bar = np.where(degenerate, theta_a, bar)
    with np.errstate(invalid="ignore"):
        part_a = np.where(psi_a > 0, psi_a * family.kl(arm_a, bar, theta_a, closure=True), 0.0)
        part_b = np.where(psi_b > 0, psi_b * family.kl(arm_b, bar, theta_b, closure=True), 0.0)
    part_a = np.where(degenerate, 0.0, part_a)
    part_b = np.where(degenerate, 0.0, part_b)
    rate = part_a + part_b
    if return_parts:
        return rate, part_a, part_b
    return rate


# -- instance-level operations -------------------------------------------


def tilted_mean(instance: InstanceSpec, psi, i: int, j: int) -> float:
    """Tilted mean of pair (i, j) under ``psi``; errors if both weights are zero."""
    psi = np.asarray(psi, float)
    val = pair_tilted_mean(instance.family, i, j,
                           instance.theta[i], instance.theta[j], psi[i], psi[j])
    if not np.isfinite(val):
        raise DegeneratePairError(f"pair ({i}, {j}) has zero total allocation")
    return float(val)


def transport_cost(instance: InstanceSpec, psi, i: int, j: int) -> float:
    psi = np.asarray(psi, float)
    return float(pair_transport_cost(instance.family, i, j,
                                     instance.theta[i], instance.theta[j], psi[i], psi[j]))


def transport_cost_grad(instance: InstanceSpec, psi, i: int, j: int) -> tuple[float, float]:
    """Partial derivatives of the pair cost in (psi_i, psi_j).

    By the envelope theorem these are the two divergences to the tilted mean.
    """
    psi = np.asarray(psi, float)
    if psi[i] + psi[j] <= 0:
        raise DegeneratePairError(f"gradient of pair ({i}, {j}) undefined at zero allocation")
    bar = tilted_mean(instance, psi, i, j)
    fam = instance.family
    return float(fam.kl(i, instance.theta[i], bar)), float(fam.kl(j, instance.theta[j], bar))


def budget_rate(instance: InstanceSpec, psi, i: int, j: int) -> float:
    psi = np.asarray(psi, float)
    return float(pair_budget_rate(instance.family, i, j,
                                  instance.theta[i], instance.theta[j], psi[i], psi[j]))


def budget_rate_grad(instance: InstanceSpec, psi, i: int, j: int) -> tuple[float, float]:
    psi = np.asarray(psi, float)
    if psi[i] + psi[j] <= 0:
        raise DegeneratePairError(f"gradient of pair ({i}, {j}) undefined at zero allocation")
    bar = pair_budget_tilted_mean(instance.family, i, j,
                                  instance.theta[i], instance.theta[j], psi[i], psi[j])
    fam = instance.family
    return float(fam.kl(i, float(bar), instance.theta[i])), float(fam.kl(j, float(bar), instance.theta[j]))


def sampling_fraction(instance: InstanceSpec, psi, i: int, j: int) -> float:
    psi = np.asarray(psi, float)
    return float(pair_sampling_fraction(instance.family, i, j,
                                        instance.theta[i], instance.theta[j], psi[i], psi[j]))


def pair_rates(instance: InstanceSpec, psi, mode: str = "confidence") -> np.ndarray:
    """Vector of pair rates over the instance's canonical pair enumeration."""
    psi = np.asarray(psi, float)
    pi, pj = instance.pairs()
    kernel = pair_transport_cost if mode == "confidence" else pair_budget_rate
    if mode not in ("confidence", "budget"):
        raise ValueError(f"unknown mode {mode!r}")
    return kernel(instance.family, pi, pj, instance.theta[pi], instance.theta[pj], psi[pi], psi[pj])


def worst_pair_rate(instance: InstanceSpec, psi, mode: str = "confidence") -> tuple[float, tuple[int, int]]:
    """Minimum pair rate and its argmin pair (lexicographic tie-break).

    This is the objective value of the allocation problem at ``psi``.
    """
    rates = pair_rates(instance, psi, mode)
    pos = int(np.argmin(rates))
    pi, pj = instance.pairs()
    return float(rates[pos]), (int(pi[pos]), int(pj[pos]))
