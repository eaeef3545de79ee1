"""Solvers for the optimal-allocation problem.

The problem: maximize, over sampling allocations on the simplex, the minimum
pair rate between top and bottom arms.  Three solvers are provided behind a
scikit-learn style estimator API (``fit`` on an :class:`InstanceSpec`, fitted
attributes with trailing underscores, ``get_params``/``set_params`` via
:class:`sklearn.base.BaseEstimator`):

* :class:`FrankWolfeGradientAscent` - saddle-point hybrid: a Frank-Wolfe step
  on the pair weights paired with a projected gradient-ascent step on the
  allocation, with averaging.  Comes with an O(1/sqrt(N)) optimality-gap
  guarantee.
* :class:`KktTracking` - streaming heuristic that plays the current worst
  pair, splits one unit of mass between its two arms by the stationary
  sampling fraction, and averages.  The pair weights are tracked implicitly
  as the empirical pair-selection frequencies.
* :class:`GridOracle` - brute-force lattice search with local polish, used as
  an independent reference in tests and for small instances.

Both iterative solvers accept ``mode="budget"`` to maximize the fixed-budget
rate instead of the transport cost; everything else is unchanged.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from .costs import (
    pair_budget_rate,
    pair_budget_tilted_mean,
    pair_sampling_fraction,
    pair_tilted_mean,
    pair_transport_cost,
    worst_pair_rate,
)
from .families import FamilyKind
from .instance import (
    InstanceSpec,
    check_allocation,
    check_pair_weights,
    uniform_allocation,
    uniform_pair_weights,
)
from .simplex import project_simplex, simplex_lattice

#: Default gradient-step scale: Gaussian instances are well conditioned, the
#: bounded-support families benefit from a larger scale.
DEFAULT_TAU_SCALE = {FamilyKind.GAUSSIAN: 1.0, FamilyKind.BERNOULLI: 10.0, FamilyKind.POISSON: 10.0}


@dataclass(frozen=True)
class TracePoint:
    """Solver state snapshot: iteration counter, allocation, pair weights, objective."""

    iteration: int
    allocation: np.ndarray
    pair_weights: np.ndarray
    value: float


class _PairWorkspace:
    """Precomputed pair indexing plus mode-dispatched rate evaluation.

    The iterative solvers evaluate all pair rates once per iteration, so this
    caches every mean-dependent quantity up front and computes the rates with
    a handful of vector operations.  Instances with boundary Bernoulli means
    fall back to the generic kernels, whose xlogy conventions handle the
    boundary exactly; the fast paths are cross-checked against those kernels
    in the test suite.
    """

    def __init__(self, instance: InstanceSpec, mode: str):
        if mode not in ("confidence", "budget"):
            raise ValueError(f"unknown mode {mode!r}")
        self.instance = instance
        self.mode = mode
        self.pi, self.pj = instance.pairs()
        self.theta_i = instance.theta[self.pi]
        self.theta_j = instance.theta[self.pj]
        fam = instance.family
        self._rate = pair_transport_cost if mode == "confidence" else pair_budget_rate
        self._fam = fam
        kind = fam.kind
        self._fast = None
        if kind == FamilyKind.GAUSSIAN:
            self._inv_var_i = 1.0 / fam.sigma2(self.pi)
            self._inv_var_j = 1.0 / fam.sigma2(self.pj)
            self._half_delta_sq = 0.5 * (self.theta_i - self.theta_j) ** 2
            self._fast = self._rates_gaussian
        elif kind == FamilyKind.BERNOULLI:
            interior = np.all(instance.theta > 0) and np.all(instance.theta < 1)
            if interior:
                self._log_i = np.log(self.theta_i)
                self._log1m_i = np.log1p(-self.theta_i)
                self._log_j = np.log(self.theta_j)
                self._log1m_j = np.log1p(-self.theta_j)
                self._eta_i = self._log_i - self._log1m_i
                self._eta_j = self._log_j - self._log1m_j
                self._fast = self._rates_bernoulli
        else:
            self._log_i = np.log(self.theta_i)
            self._log_j = np.log(self.theta_j)
            self._fast = self._rates_poisson

    # fast paths return (rates, part_i) with part_i the top arm's weighted
    # divergence, from which fractions and gradients follow

    def _rates_gaussian(self, psi_i, psi_j):
        wa = psi_i * self._inv_var_i
        wb = psi_j * self._inv_var_j
        s = wa + wb
        with np.errstate(invalid="ignore", divide="ignore"):
            safe = np.where(s > 0, s, 1.0)
            rate = np.where(s > 0, self._half_delta_sq * wa * wb / safe, 0.0)
            part_i = np.where(s > 0, rate * wb / safe, 0.0)
        return rate, part_i

    def _rates_bernoulli(self, psi_i, psi_j):
        s = psi_i + psi_j
        with np.errstate(invalid="ignore", divide="ignore"):
            safe = np.where(s > 0, s, 1.0)
            if self.mode == "confidence":
                bar = np.where(s > 0, (psi_i * self.theta_i + psi_j * self.theta_j) / safe,
                               self.theta_i)
                log_bar, log1m_bar = np.log(bar), np.log1p(-bar)
                part_i = psi_i * (self.theta_i * (self._log_i - log_bar)
                                  + (1.0 - self.theta_i) * (self._log1m_i - log1m_bar))
                part_j = psi_j * (self.theta_j * (self._log_j - log_bar)
                                  + (1.0 - self.theta_j) * (self._log1m_j - log1m_bar))
            else:
                eta_bar = np.where(s > 0, (psi_i * self._eta_i + psi_j * self._eta_j) / safe, 0.0)
                bar = 1.0 / (1.0 + np.exp(-eta_bar))
                log_bar, log1m_bar = np.log(bar), np.log1p(-bar)
                part_i = psi_i * (bar * (log_bar - self._log_i)
                                  + (1.0 - bar) * (log1m_bar - self._log1m_i))
                part_j = psi_j * (bar * (log_bar - self._log_j)
                                  + (1.0 - bar) * (log1m_bar - self._log1m_j))
            rate = np.where(s > 0, part_i + part_j, 0.0)
            part_i = np.where(s > 0, part_i, 0.0)
        return rate, part_i

    def _rates_poisson(self, psi_i, psi_j):
        s = psi_i + psi_j
        with np.errstate(invalid="ignore", divide="ignore"):
            safe = np.where(s > 0, s, 1.0)
            if self.mode == "confidence":
                bar = np.where(s > 0, (psi_i * self.theta_i + psi_j * self.theta_j) / safe,
                               self.theta_i)
                log_bar = np.log(bar)
                part_i = psi_i * (bar - self.theta_i + self.theta_i * (self._log_i - log_bar))
                part_j = psi_j * (bar - self.theta_j + self.theta_j * (self._log_j - log_bar))
            else:
                log_bar = np.where(s > 0, (psi_i * self._log_i + psi_j * self._log_j) / safe, 0.0)
                bar = np.exp(log_bar)
                part_i = psi_i * (self.theta_i - bar + bar * (log_bar - self._log_i))
                part_j = psi_j * (self.theta_j - bar + bar * (log_bar - self._log_j))
            rate = np.where(s > 0, part_i + part_j, 0.0)
            part_i = np.where(s > 0, part_i, 0.0)
        return rate, part_i

    def rates_and_parts(self, psi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        psi_i, psi_j = psi[self.pi], psi[self.pj]
        if self._fast is not None:
            return self._fast(psi_i, psi_j)
        rate, part_i, _ = self._rate(self._fam, self.pi, self.pj, self.theta_i,
                                     self.theta_j, psi_i, psi_j, return_parts=True)
        return rate, part_i

    def rates(self, psi: np.ndarray) -> np.ndarray:
        return self.rates_and_parts(psi)[0]

    def grad_of_pair(self, pos: int, psi: np.ndarray) -> tuple[float, float]:
        """Gradient of the selected pair's rate in its two coordinates at psi.

        By the envelope theorem these are the per-arm divergences at the
        tilted mean, i.e. the weighted parts divided by the allocations.
        """
        i, j = self.pi[pos], self.pj[pos]
        if psi[i] > 0 and psi[j] > 0:
            rate, part_i = self.rates_and_parts(psi)
            return (float(part_i[pos] / psi[i]),
                    float((rate[pos] - part_i[pos]) / psi[j]))
        fam = self._fam
        if self.mode == "confidence":
            bar = pair_tilted_mean(fam, i, j, self.theta_i[pos], self.theta_j[pos], psi[i], psi[j])
            if not np.isfinite(bar):
                return 0.0, 0.0
            return (float(fam.kl(i, self.theta_i[pos], bar, closure=True)),
                    float(fam.kl(j, self.theta_j[pos], bar, closure=True)))
        bar = pair_budget_tilted_mean(fam, i, j, self.theta_i[pos], self.theta_j[pos], psi[i], psi[j])
        if not np.isfinite(bar):
            return 0.0, 0.0
        return (float(fam.kl(i, bar, self.theta_i[pos], closure=True)),
                float(fam.kl(j, bar, self.theta_j[pos], closure=True)))


class BaseAllocationSolver(BaseEstimator):
    """Common fitted-attribute contract for allocation solvers.

    After ``fit(instance)``:

    * ``allocation_``: the solver's allocation on the simplex,
    * ``pair_weights_``: dual weights over the canonical pair enumeration,
    * ``value_``: worst pair rate achieved by ``allocation_``,
    * ``best_pair_``: the argmin pair at ``allocation_``,
    * ``trace_``: list of :class:`TracePoint` (empty unless tracing enabled).
    """

    def _finalize(self, instance: InstanceSpec, mode: str, psi: np.ndarray,
                  mu: np.ndarray, trace: list[TracePoint]):
        self.instance_ = instance
        self.allocation_ = psi
        self.pair_weights_ = mu
        self.value_, self.best_pair_ = worst_pair_rate(instance, psi, mode)
        self.trace_ = trace
        return self

    def fit(self, instance: InstanceSpec) -> "BaseAllocationSolver":
        raise NotImplementedError


class FrankWolfeGradientAscent(BaseAllocationSolver):
    """Saddle-point solver: Frank-Wolfe on pair weights, gradient ascent on psi.

    Per iteration t (step sizes alpha_t = 2/(t+1), tau_t = tau_scale * N^1.5 / t):

    1. pick the worst pair at the current averaged allocation,
    2. average its indicator into the pair weights with weight alpha_t,
    3. take one projected gradient-ascent step on an auxiliary allocation,
       along the picked pair's rate gradient with step 1/tau_t,
    4. average the auxiliary point into the allocation with weight alpha_t.

    ``tau_scale=None`` selects the per-family default.  With ``trace_every=n``
    a snapshot is recorded every n iterations (plus the final iterate).
    """

    def __init__(self, n_iters: int = 100_000, tau_scale: float | None = None,
                 mode: str = "confidence", psi0=None, mu0=None, trace_every: int = 0):
        self.n_iters = n_iters
        self.tau_scale = tau_scale
        self.mode = mode
        self.psi0 = psi0
        self.mu0 = mu0
        self.trace_every = trace_every

    def fit(self, instance: InstanceSpec) -> "FrankWolfeGradientAscent":
        if self.n_iters < 1:
            raise ValueError("n_iters must be at least 1")
        ws = _PairWorkspace(instance, self.mode)
        n, n_pairs = instance.n_arms, instance.n_pairs
        psi = (uniform_allocation(n) if self.psi0 is None
               else check_allocation(self.psi0, n))
        mu = (uniform_pair_weights(n_pairs) if self.mu0 is None
              else check_pair_weights(self.mu0, n_pairs))
        scale = self.tau_scale if self.tau_scale is not None else DEFAULT_TAU_SCALE[instance.family.kind]
        if scale <= 0:
            raise ValueError("tau_scale must be positive")
        u = psi.copy()
        horizon = float(self.n_iters) ** 1.5 * scale
        trace: list[TracePoint] = []
        for t in range(1, self.n_iters + 1):
            alpha = 2.0 / (t + 1.0)
            rates = ws.rates(psi)
            pos = int(np.argmin(rates))
            mu *= 1.0 - alpha
            mu[pos] += alpha
            gi, gj = ws.grad_of_pair(pos, u)
            step = t / horizon
            u[ws.pi[pos]] += step * gi
            u[ws.pj[pos]] += step * gj
            u = project_simplex(u)
            psi = (1.0 - alpha) * psi + alpha * u
            if self.trace_every and (t % self.trace_every == 0 or t == self.n_iters):
                trace.append(TracePoint(t, psi.copy(), mu.copy(), float(ws.rates(psi).min())))
        return self._finalize(instance, self.mode, psi, mu, trace)


class KktTracking(BaseAllocationSolver):
    """Streaming stationarity-tracking heuristic.

    Per iteration: select the worst pair, split one unit of sampling mass
    between its two arms by the stationary fraction, and move the allocation
    to the running average of these split points (step 1/t).  The recorded
    pair weights are the empirical selection frequencies, which converge to
    dual weights of the problem.
    """

    def __init__(self, n_iters: int = 1_000_000, mode: str = "confidence",
                 psi0=None, trace_every: int = 0, step_offset: int = 0):
        self.n_iters = n_iters
        self.mode = mode
        self.psi0 = psi0
        self.trace_every = trace_every
        self.step_offset = step_offset

    def fit(self, instance: InstanceSpec) -> "KktTracking":
        if self.n_iters < 1:
            raise ValueError("n_iters must be at least 1")
        ws = _PairWorkspace(instance, self.mode)
        n = instance.n_arms
        psi = (uniform_allocation(n) if self.psi0 is None
               else check_allocation(self.psi0, n))
        if np.any(psi <= 0):
            raise ValueError("KKT tracking needs a strictly positive starting allocation")
        mu = np.zeros(instance.n_pairs)
        trace: list[TracePoint] = []
        # step_offset > 0 turns a warm start into a continuation: the first
        # update behaves like iteration step_offset+1 of a longer run instead
        # of overwriting psi0 with the first split point
        for t in range(1, self.n_iters + 1):
            rates, parts = ws.rates_and_parts(psi)
            pos = int(np.argmin(rates))
            frac = float(parts[pos] / rates[pos]) if rates[pos] > 0 else 0.5
            inv_t = 1.0 / (t + self.step_offset)
            mu *= 1.0 - inv_t
            mu[pos] += inv_t
            psi *= 1.0 - inv_t
            psi[ws.pi[pos]] += inv_t * frac
            psi[ws.pj[pos]] += inv_t * (1.0 - frac)
            if self.trace_every and (t % self.trace_every == 0 or t == self.n_iters):
                trace.append(TracePoint(t, psi.copy(), mu.copy(), float(ws.rates(psi).min())))
        return self._finalize(instance, self.mode, psi, mu, trace)


class GridOracle(BaseAllocationSolver):
    """Exhaustive lattice search over the simplex with optional local polish.

    Evaluates the worst pair rate at every simplex point whose coordinates
    are multiples of ``step`` and keeps the best; ``polish`` then runs a
    coordinate-exchange descent with shrinking step sizes from ``step/10``
    down to ``polish_min_step``.  Refuses instances with more than five arms.

    The fitted pair weights are backed out of the stationarity system at the
    polished point (see :func:`pure_explore.optimality.estimate_pair_weights`).
    """

    MAX_ARMS = 5

    def __init__(self, step: float = 0.005, polish: bool = True,
                 polish_min_step: float = 1e-5, mode: str = "confidence"):
        self.step = step
        self.polish = polish
        self.polish_min_step = polish_min_step
        self.mode = mode

    def fit(self, instance: InstanceSpec) -> "GridOracle":
        if instance.n_arms > self.MAX_ARMS:
            raise ValueError(
                f"grid oracle supports at most {self.MAX_ARMS} arms, got {instance.n_arms}"
            )
        if not 0 < self.step <= 0.5:
            raise ValueError("step must lie in (0, 0.5]")
        ws = _PairWorkspace(instance, self.mode)
        units = int(round(1.0 / self.step))
        best_val, best_psi = -np.inf, None
        for block in simplex_lattice(instance.n_arms, units):
            vals = self._block_values(ws, block)
            pos = int(np.argmax(vals))
            if vals[pos] > best_val:
                best_val, best_psi = float(vals[pos]), block[pos].copy()
        psi = best_psi
        if self.polish:
            psi, best_val = self._polish(ws, psi, best_val)
        from .optimality import estimate_pair_weights  # local import avoids a cycle

        mu, _ = estimate_pair_weights(instance, psi, mode=self.mode, rtol=1e-5)
        return self._finalize(instance, self.mode, psi, mu, [])

    @staticmethod
    def _block_values(ws: _PairWorkspace, block: np.ndarray) -> np.ndarray:
        rates = ws._rate(ws._fam, ws.pi[None, :], ws.pj[None, :],
                         ws.theta_i[None, :], ws.theta_j[None, :],
                         block[:, ws.pi], block[:, ws.pj])
        return rates.min(axis=1)

    def _polish(self, ws: _PairWorkspace, psi: np.ndarray, val: float) -> tuple[np.ndarray, float]:
        """Refine the lattice winner by smoothed concave maximization.

        The worst pair rate is a minimum of concave functions, so its soft
        minimum is concave and smooth; driving the smoothing width down in a
        continuation loop lets a standard constrained quasi-Newton step land
        on the nonsmooth optimum that direct pattern search stalls short of.
        """
        from scipy.optimize import minimize

        scale = max(val, 1e-12)
        n = psi.size

        def negative_softmin(x: np.ndarray, lam: float) -> tuple[float, np.ndarray]:
            rates = ws.rates(np.maximum(x, 0.0))
            m = float(rates.min())
            shifted = np.exp(-(rates - m) / lam)
            value = m - lam * np.log(shifted.sum())
            weights = shifted / shifted.sum()
            grad = np.zeros(n)
            for pos, w in enumerate(weights):
                if w < 1e-14:
                    continue
                gi, gj = ws.grad_of_pair(pos, np.maximum(x, 0.0))
                grad[ws.pi[pos]] += w * gi
                grad[ws.pj[pos]] += w * gj
            return -value, -grad

        lam = 1e-2 * scale
        floor = max(self.polish_min_step * scale, 1e-9 * scale)
        constraints = ({"type": "eq", "fun": lambda x: x.sum() - 1.0, "jac": lambda x: np.ones(n)},)
        while lam >= floor:
            res = minimize(negative_softmin, psi, args=(lam,), jac=True, method="SLSQP",
                           bounds=[(0.0, 1.0)] * n, constraints=constraints,
                           options={"maxiter": 200, "ftol": 1e-16})
            cand = np.maximum(res.x, 0.0)
            cand /= cand.sum()
            cand_val = float(ws.rates(cand).min())
            if cand_val > val:
                psi, val = cand, cand_val
            lam /= 10.0
        return psi, val


_SOLVERS = {"fwga": FrankWolfeGradientAscent, "kkt": KktTracking, "grid": GridOracle}


def make_solver(kind: str, **params) -> BaseAllocationSolver:
    """Instantiate a solver by its config name: ``fwga``, ``kkt``, or ``grid``."""
    try:
        cls = _SOLVERS[kind]
    except KeyError:
        raise ValueError(f"unknown solver {kind!r}; expected one of {sorted(_SOLVERS)}") from None
    return cls(**params)


def solve_allocation(instance: InstanceSpec, kind: str = "fwga", **params) -> BaseAllocationSolver:
    """Fit a fresh solver of the given kind on ``instance`` and return it."""
    return make_solver(kind, **params).fit(instance)
