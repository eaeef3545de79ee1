"""Posterior probability that a given arm set is the true top set.

Under independent per-arm posteriors the event "every arm in the set beats
every arm outside it" reduces to a one-dimensional integral over the density
of the set's minimum: at each point, the probability that all outside arms
sit below it.  Both the probability and its complement are computed by
adaptive Simpson quadrature with vectorized integrand evaluation; the
complement uses a cancellation-free integrand so that values far below
floating-point epsilon of 1 remain accurate in relative terms.
"""
from __future__ import annotations

import numpy as np
from scipy import stats

from .families import FamilyKind, PosteriorState


def adaptive_simpson(f, lo: float, hi: float, abs_tol: float = 1e-10,
                     rel_tol: float = 0.0, min_panels: int = 64,
                     max_rounds: int = 24) -> float:
    """Adaptive composite Simpson rule with batched function evaluation.

    ``f`` must map a float array to a float array.  Panels whose Richardson
    error estimate exceeds their length-proportional share of the tolerance
    are split in half, all pending midpoints being evaluated in one call per
    refinement round.  ``rel_tol`` adds a tolerance floor proportional to the
    first whole-interval estimate, which is what the cancellation-free
    complement integrals rely on.
    """
    if hi <= lo:
        return 0.0
    edges = np.linspace(lo, hi, min_panels + 1)
    x_lo, x_hi = edges[:-1], edges[1:]
    x_mid = 0.5 * (x_lo + x_hi)
    nodes = np.concatenate([x_lo, x_mid, [hi]])
    vals = f(nodes)
    f_lo, f_mid = vals[:min_panels], vals[min_panels:2 * min_panels]
    f_hi = np.concatenate([f_lo[1:], [vals[-1]]])
    simpson = (x_hi - x_lo) / 6.0 * (f_lo + 4.0 * f_mid + f_hi)
    tol = max(abs_tol, rel_tol * float(np.abs(simpson).sum()))
    total = 0.0
    span = hi - lo
    for _ in range(max_rounds):
        left_mid = 0.5 * (x_lo + x_mid)
        right_mid = 0.5 * (x_mid + x_hi)
        f_lm = f(left_mid)
        f_rm = f(right_mid)
        left = (x_mid - x_lo) / 6.0 * (f_lo + 4.0 * f_lm + f_mid)
        right = (x_hi - x_mid) / 6.0 * (f_mid + 4.0 * f_rm + f_hi)
        err = (left + right - simpson) / 15.0
        done = np.abs(err) <= tol * (x_hi - x_lo) / span
        total += float(np.sum(left[done] + right[done] + err[done]))
        if bool(done.all()):
            return total
        keep = ~done
        x_lo = np.concatenate([x_lo[keep], x_mid[keep]])
        x_hi = np.concatenate([x_mid[keep], x_hi[keep]])
        f_lo = np.concatenate([f_lo[keep], f_mid[keep]])
        f_hi = np.concatenate([f_mid[keep], f_hi[keep]])
        x_mid = np.concatenate([left_mid[keep], right_mid[keep]])
        f_mid = np.concatenate([f_lm[keep], f_rm[keep]])
        simpson = np.concatenate([left[keep], right[keep]])
    # depth exhausted: account for the still-open panels at their last estimate
    return total + float(np.sum(simpson))


class _VectorizedPosterior:
    """Batched cdf/sf/pdf evaluation of per-arm posteriors at shared nodes."""

    def __init__(self, posterior: PosteriorState, arms: np.ndarray):
        kind = posterior.family.kind
        if kind == FamilyKind.GAUSSIAN:
            loc = (posterior.sums / posterior.counts)[arms]
            scale = np.sqrt(posterior.family.variances[arms] / posterior.counts[arms])
            self._dist = stats.norm(loc=loc, scale=scale)
        elif kind == FamilyKind.BERNOULLI:
            a, b = posterior.beta_params()
            self._dist = stats.beta(a[arms], b[arms])
        else:
            shape, rate = posterior.gamma_params()
            self._dist = stats.gamma(shape[arms], scale=1.0 / rate[arms])

    def cdf(self, x: np.ndarray) -> np.ndarray:
        return self._dist.cdf(x[:, None])

    def logcdf(self, x: np.ndarray) -> np.ndarray:
        return self._dist.logcdf(x[:, None])

    def sf(self, x: np.ndarray) -> np.ndarray:
        return self._dist.sf(x[:, None])

    def pdf(self, x: np.ndarray) -> np.ndarray:
        return self._dist.pdf(x[:, None])


def _split_sets(posterior: PosteriorState, top_arms) -> tuple[np.ndarray, np.ndarray]:
    top = np.asarray(sorted(int(a) for a in np.asarray(top_arms).ravel()), dtype=int)
    mask = np.zeros(posterior.n_arms, dtype=bool)
    mask[top] = True
    return top, np.nonzero(~mask)[0]


def _min_top_density(top_post: _VectorizedPosterior, x: np.ndarray) -> np.ndarray:
    """Density of the minimum over the top arms at the nodes ``x``."""
    sf = top_post.sf(x)
    pdf = top_post.pdf(x)
    n_top = sf.shape[1]
    dens = np.zeros(x.shape[0])
    for i in range(n_top):
        others = np.prod(np.delete(sf, i, axis=1), axis=1)
        dens += pdf[:, i] * others
    return dens


def posterior_prob_correct(posterior: PosteriorState, top_arms,
                           abs_tol: float = 1e-10) -> float:
    """Posterior probability that every arm in ``top_arms`` beats the rest."""
    posterior._require_proper()
    top, bottom = _split_sets(posterior, top_arms)
    if bottom.size == 0:
        return 1.0
    top_post = _VectorizedPosterior(posterior, top)
    bot_post = _VectorizedPosterior(posterior, bottom)

    def integrand(x: np.ndarray) -> np.ndarray:
        below = np.exp(np.sum(bot_post.logcdf(x), axis=1))
        return below * _min_top_density(top_post, x)

    lo, hi = posterior.support_window()
    return float(np.clip(adaptive_simpson(integrand, lo, hi, abs_tol=abs_tol), 0.0, 1.0))


def posterior_prob_incorrect(posterior: PosteriorState, top_arms,
                             rel_tol: float = 1e-8) -> float:
    """Complement of :func:`posterior_prob_correct`, accurate when tiny.

    Integrates (1 - prod of bottom cdfs) against the top-minimum density;
    the first factor is computed through ``expm1`` of summed log-cdfs, so no
    cancellation occurs even when the complement is far below 1e-16.
    """
    posterior._require_proper()
    top, bottom = _split_sets(posterior, top_arms)
    if bottom.size == 0:
        return 0.0
    top_post = _VectorizedPosterior(posterior, top)
    bot_post = _VectorizedPosterior(posterior, bottom)

    def integrand(x: np.ndarray) -> np.ndarray:
        some_above = -np.expm1(np.sum(bot_post.logcdf(x), axis=1))
        return some_above * _min_top_density(top_post, x)

    lo, hi = posterior.support_window()
    value = adaptive_simpson(integrand, lo, hi, abs_tol=0.0, rel_tol=rel_tol)
    return float(min(max(value, 0.0), 1.0))
