"""Sequential sampling policies for top-k identification.

Every policy answers one question per round: which arm(s) to pull next,
given the current :class:`BanditState`.  The simulation runner owns the
state, the reward stream, and the stopping rule; policies keep only their
own scratch (tracking targets, phase schedules, working sets).

Policies that ship with their own stopping rule (the confidence-bound
baselines) expose ``own_stopping = True`` and a ``should_stop`` method;
everything else is stopped externally by the likelihood-ratio rule or by the
sampling budget.
"""
from __future__ import annotations

import numpy as np
from scipy.optimize import brentq

from .costs import (
    pair_budget_rate,
    pair_transport_cost,
)
from .families import FamilyKind, RewardFamily
from .instance import InstanceSpec
from .simplex import project_simplex_floor
from .solvers import KktTracking
from .state import BanditState, top_k_arms


class Policy:
    """Base sampling policy; subclasses override :meth:`arms_to_pull`."""

    name = "policy"
    own_stopping = False
    fixed_confidence_ok = True
    fixed_budget_ok = True
    bayesian = False

    def reset(self, family: RewardFamily, n_arms: int, rng: np.random.Generator) -> None:
        """Called once per replication before any pull."""

    def runner_initializes(self) -> bool:
        """Whether the runner should pull each arm once before the main loop."""
        return True

    def arms_to_pull(self, state: BanditState, rng: np.random.Generator) -> list[int]:
        raise NotImplementedError

    def observe(self, state: BanditState) -> None:
        """Called after the rewards of the requested batch have been applied."""

    def should_stop(self, state: BanditState) -> bool:
        raise NotImplementedError(f"{self.name} has no built-in stopping rule")

    def recommend(self, state: BanditState) -> np.ndarray:
        """Final recommendation; defaults to the empirical top-k set."""
        return state.empirical_top_k(self.k)


class UniformRoundRobin(Policy):
    """Cycle through the arms in index order."""

    name = "uniform"
    bayesian = True

    def __init__(self, k: int):
        self.k = k

    def arms_to_pull(self, state: BanditState, rng: np.random.Generator) -> list[int]:
        return [state.t % state.n_arms]


class KktThompson(Policy):
    """Stationarity-tracking Thompson sampling.

    Each round: draw a mean vector from the posterior, split the arms into
    sampled top and bottom sets, find the pair with the smallest plug-in
    discrimination rate at the realized allocation, and play one of its two
    arms with the stationary sampling fraction as coin bias.  Parameter-free.

    ``mode="budget"`` swaps in the fixed-budget rate for the pair choice and
    the coin bias.
    """

    bayesian = True

    def __init__(self, k: int, mode: str = "confidence"):
        if mode not in ("confidence", "budget"):
            raise ValueError(f"unknown mode {mode!r}")
        self.k = k
        self.mode = mode
        self.name = "kkt-ts" if mode == "confidence" else "kkt-ts-budget"

    def arms_to_pull(self, state: BanditState, rng: np.random.Generator) -> list[int]:
        tilde = state.posterior.sample(rng)
        coin = rng.random()
        top = top_k_arms(tilde, self.k)
        mask = np.zeros(state.n_arms, dtype=bool)
        mask[top] = True
        bottom = np.nonzero(~mask)[0]
        pi = np.repeat(top, bottom.size)
        pj = np.tile(bottom, top.size)
        psi = state.counts / state.t
        kernel = pair_transport_cost if self.mode == "confidence" else pair_budget_rate
        rate, part_a, _ = kernel(state.family, pi, pj, tilde[pi], tilde[pj],
                                 psi[pi], psi[pj], return_parts=True)
        pos = int(np.argmin(rate))
        frac = part_a[pos] / rate[pos] if rate[pos] > 0 else 0.5
        return [int(pi[pos]) if coin < frac else int(pj[pos])]


class _PluginSolverMixin:
    """Shared warm-started tracking solver for plug-in allocation targets."""

    solver_iters: int
    k: int

    def _reset_solver(self, n_arms: int) -> None:
        self._warm = np.full(n_arms, 1.0 / n_arms)

    def _plugin_target(self, family: RewardFamily, means: np.ndarray) -> np.ndarray:
        means = family.clip_mean(means)
        if family.kind == FamilyKind.POISSON:
            means = np.maximum(means, 1e-9)
        instance = InstanceSpec.plugin(family, means, self.k)
        # step_offset makes the warm start behave like a continuation of the
        # previous rounds' iterations instead of being overwritten at step one
        solver = KktTracking(n_iters=self.solver_iters, psi0=self._warm,
                             step_offset=self.solver_iters)
        self._warm = solver.fit(instance).allocation_
        return self._warm


class DirectTrackingThompson(_PluginSolverMixin, Policy):
    """Track the optimal allocation of a posterior-sampled instance.

    Each round solves the allocation problem at a fresh posterior draw
    (posterior noise supplies the exploration) and pulls the arm whose
    sampling deficit against that target is largest.
    """

    name = "dt-ts"
    bayesian = True

    def __init__(self, k: int, solver_iters: int = 100):
        self.k = k
        self.solver_iters = solver_iters

    def reset(self, family, n_arms, rng):
        self._reset_solver(n_arms)

    def arms_to_pull(self, state: BanditState, rng: np.random.Generator) -> list[int]:
        tilde = state.posterior.sample(rng)
        target = self._plugin_target(state.family, tilde)
        return [int(np.argmax(state.t * target - state.counts))]


class CTracking(_PluginSolverMixin, Policy):
    """Cumulative tracking of floor-clipped plug-in targets.

    Each round solves the allocation problem at the sample means, projects
    the target onto the shrinking-floor simplex (forced exploration), adds it
    to a running target total, and pulls the arm furthest behind its total.
    """

    name = "c-tracking"

    def __init__(self, k: int, solver_iters: int = 50):
        self.k = k
        self.solver_iters = solver_iters

    def reset(self, family, n_arms, rng):
        self._reset_solver(n_arms)
        self._cum = np.zeros(n_arms)

    def arms_to_pull(self, state: BanditState, rng: np.random.Generator) -> list[int]:
        target = self._plugin_target(state.family, state.means())
        eps = 0.5 / np.sqrt(state.n_arms**2 + state.t)
        self._cum += project_simplex_floor(target, eps)
        return [int(np.argmax(self._cum - state.counts))]


class DTracking(_PluginSolverMixin, Policy):
    """Direct tracking of the plug-in target with explicit forced exploration.

    Any arm whose count falls below sqrt(t) - K/2 is pulled first (least
    sampled wins); otherwise the arm with the largest deficit against the
    current plug-in target is pulled.
    """

    name = "d-tracking"

    def __init__(self, k: int, solver_iters: int = 50):
        self.k = k
        self.solver_iters = solver_iters

    def reset(self, family, n_arms, rng):
        self._reset_solver(n_arms)

    def arms_to_pull(self, state: BanditState, rng: np.random.Generator) -> list[int]:
        starved = np.nonzero(state.counts < np.sqrt(state.t) - state.n_arms / 2.0)[0]
        if starved.size:
            return [int(starved[np.argmin(state.counts[starved])])]
        target = self._plugin_target(state.family, state.means())
        return [int(np.argmax(state.t * target - state.counts))]


# -- confidence-bound baselines -------------------------------------------


def kl_confidence_bounds(family: RewardFamily, arm: int, mean: float, count: float,
                         beta: float) -> tuple[float, float]:
    """Divergence-ball confidence interval around a sample mean.

    The upper limit is the largest mean whose divergence from the sample
    mean, scaled by the pull count, stays within the exploration budget
    ``beta``; the lower limit mirrors it below.  Gaussian limits are closed
    form; the other families are solved by root bisection.
    """
    if beta < 0:
        raise ValueError("exploration budget beta must be nonnegative")
    if beta == 0:
        return mean, mean
    radius = beta / count
    if family.kind == FamilyKind.GAUSSIAN:
        half_width = float(np.sqrt(2.0 * family.sigma2(arm) * radius))
        return mean - half_width, mean + half_width

    def excess(x: float) -> float:
        return float(family.kl(arm, mean, x, closure=True)) - radius

    if family.kind == FamilyKind.BERNOULLI:
        upper = 1.0 if mean >= 1.0 or excess(1.0 - 1e-13) <= 0 else brentq(
            excess, mean, 1.0 - 1e-13, xtol=1e-14)
        lower = 0.0 if mean <= 0.0 or excess(1e-13) <= 0 else brentq(
            excess, 1e-13, mean, xtol=1e-14)
        return float(lower), float(upper)
    # Poisson: expand an upper bracket geometrically; lower bracket shrinks to 0
    hi = max(mean, 1e-12) * 2.0 + 1.0
    while excess(hi) < 0:
        hi *= 2.0
    upper = brentq(excess, mean, hi, xtol=1e-14)
    if mean <= 0:
        lower = 0.0
    else:
        lo = mean / 2.0
        while excess(lo) < 0 and lo > 1e-300:
            lo /= 2.0
        lower = brentq(excess, lo, mean, xtol=1e-14) if excess(lo) >= 0 else 0.0
    return float(lower), float(upper)


def _heuristic_beta(t: int, delta: float) -> float:
    return float(np.log((np.log(max(t, 1)) + 1.0) / delta))


class KlLucb(Policy):
    """Sample the two most confusable arms across the empirical split.

    Per round: the arm outside the empirical top-k with the highest upper
    confidence limit and the top-k arm with the lowest lower limit are both
    pulled.  Stops once those two limits separate.
    """

    name = "kl-lucb"
    own_stopping = True
    fixed_budget_ok = False

    def __init__(self, k: int, delta: float):
        self.k = k
        self.delta = delta

    def _critical(self, state: BanditState) -> tuple[int, int, float, float]:
        means = state.means()
        beta = _heuristic_beta(state.t, self.delta)
        top = state.empirical_top_k(self.k)
        mask = np.zeros(state.n_arms, dtype=bool)
        mask[top] = True
        uppers = np.full(state.n_arms, -np.inf)
        lowers = np.full(state.n_arms, np.inf)
        for arm in range(state.n_arms):
            lo, up = kl_confidence_bounds(state.family, arm, means[arm],
                                          state.counts[arm], beta)
            if mask[arm]:
                lowers[arm] = lo
            else:
                uppers[arm] = up
        contender = int(np.argmax(uppers))
        weakest = int(np.argmin(lowers))
        return contender, weakest, float(uppers[contender]), float(lowers[weakest])

    def arms_to_pull(self, state: BanditState, rng: np.random.Generator) -> list[int]:
        contender, weakest, _, _ = self._critical(state)
        return [contender, weakest]

    def should_stop(self, state: BanditState) -> bool:
        _, _, upper, lower = self._critical(state)
        return upper <= lower


class KlElimination(Policy):
    """Uniform racing over a shrinking candidate set, eliminations only.

    All remaining arms are sampled once per round; an arm is eliminated when
    its upper confidence limit falls below the lowest lower limit of the
    current in-set candidates.  Stops when the survivors plus previous
    selections number exactly k.
    """

    name = "kl-elimination"
    own_stopping = True
    fixed_budget_ok = False

    def __init__(self, k: int, delta: float):
        self.k = k
        self.delta = delta

    def reset(self, family, n_arms, rng):
        self.selected: list[int] = []
        self.remaining: list[int] = list(range(n_arms))

    def arms_to_pull(self, state: BanditState, rng: np.random.Generator) -> list[int]:
        return list(self.remaining)

    def observe(self, state: BanditState) -> None:
        if len(self.selected) > self.k:
            raise RuntimeError("elimination invariant violated: too many selections")
        if len(self.remaining) + len(self.selected) <= self.k:
            return
        means = state.means()
        beta = _heuristic_beta(state.t, self.delta)
        slots = self.k - len(self.selected)
        ranked = sorted(self.remaining, key=lambda a: (-means[a], a))
        in_set, out_set = ranked[:slots], ranked[slots:]
        worst = min(self.remaining, key=lambda a: (means[a], a))
        lowest_in = min(
            kl_confidence_bounds(state.family, a, means[a], state.counts[a], beta)[0]
            for a in in_set
        )
        upper_worst = kl_confidence_bounds(state.family, worst, means[worst],
                                           state.counts[worst], beta)[1]
        if out_set and upper_worst < lowest_in:
            self.remaining.remove(worst)

    def should_stop(self, state: BanditState) -> bool:
        return len(self.remaining) + len(self.selected) <= self.k

    def recommend(self, state: BanditState) -> np.ndarray:
        chosen = list(self.selected) + list(self.remaining)
        if len(chosen) != self.k:  # budget truncation: fill by sample mean
            means = state.means()
            chosen = sorted(chosen, key=lambda a: (-means[a], a))[: self.k]
            extra = [a for a in top_k_arms(means, state.n_arms) if a not in chosen]
            chosen += extra[: self.k - len(chosen)]
        return np.sort(np.asarray(chosen, dtype=int))


class UGapE(Policy):
    """Gap-index exploration; confidence and budget variants.

    Every arm carries a gap index: the k-th largest upper limit among the
    other arms minus its own lower limit.  The k arms with the smallest
    indices form the candidate set; the most ambiguous of the two critical
    arms (widest interval) is pulled.

    The confidence variant stops when every candidate's gap index is
    nonpositive, i.e. the candidate set is separated from the rest; the
    cited statement of the stopping sign is ambiguous, and this separation
    form is the one that makes the rule terminate correctly.  The budget
    variant needs the exploration scale ``a`` and the complexity sum of the
    instance, and recommends the candidate set seen with the best (lowest)
    worst gap index.
    """

    own_stopping = True

    def __init__(self, k: int, delta: float | None = None,
                 a: float | None = None, budget: int | None = None,
                 complexity: float | None = None):
        self.k = k
        self.delta = delta
        self.a = a
        self.budget = budget
        self.complexity = complexity
        if delta is not None:
            self.name = "ugape-confidence"
            self.fixed_budget_ok = False
            self.mode = "confidence"
        else:
            if a is None or budget is None or complexity is None:
                raise ValueError("budget variant needs a, budget, and complexity")
            self.name = "ugape-budget"
            self.fixed_confidence_ok = False
            self.mode = "budget"
        self.last_gap_indices: np.ndarray | None = None

    def reset(self, family, n_arms, rng):
        self._best_score = np.inf
        self._best_set: np.ndarray | None = None

    def _bounds(self, state: BanditState) -> tuple[np.ndarray, np.ndarray]:
        means = state.means()
        if self.mode == "confidence":
            beta = _heuristic_beta(state.t, self.delta)
            pairs = [kl_confidence_bounds(state.family, arm, means[arm],
                                          state.counts[arm], beta)
                     for arm in range(state.n_arms)]
            lowers = np.array([p[0] for p in pairs])
            uppers = np.array([p[1] for p in pairs])
        else:
            width = np.sqrt(self.a * self.budget / (4.0 * self.complexity * state.counts))
            lowers, uppers = means - width, means + width
        return lowers, uppers

    def _gap_indices(self, lowers: np.ndarray, uppers: np.ndarray) -> np.ndarray:
        order = np.sort(uppers)[::-1]
        n = uppers.size
        indices = np.empty(n)
        for arm in range(n):
            # k-th largest upper limit among the other arms
            kth = order[self.k] if uppers[arm] >= order[self.k - 1] else order[self.k - 1]
            indices[arm] = kth - lowers[arm]
        return indices

    def _step(self, state: BanditState) -> tuple[int, bool, np.ndarray]:
        lowers, uppers = self._bounds(state)
        gaps = self._gap_indices(lowers, uppers)
        self.last_gap_indices = gaps
        candidates = np.sort(np.argsort(gaps, kind="stable")[: self.k])
        mask = np.zeros(state.n_arms, dtype=bool)
        mask[candidates] = True
        outsiders = np.nonzero(~mask)[0]
        contender = int(outsiders[np.argmax(uppers[outsiders])])
        weakest = int(candidates[np.argmin(lowers[candidates])])
        widths = uppers - lowers
        pull = contender if widths[contender] >= widths[weakest] else weakest
        score = float(np.max(gaps[candidates]))
        if score < self._best_score:
            self._best_score, self._best_set = score, candidates
        return pull, score <= 0.0, gaps

    def arms_to_pull(self, state: BanditState, rng: np.random.Generator) -> list[int]:
        pull, _, _ = self._step(state)
        return [pull]

    def should_stop(self, state: BanditState) -> bool:
        _, separated, _ = self._step(state)
        return separated

    def recommend(self, state: BanditState) -> np.ndarray:
        if self.mode == "budget" and self._best_set is not None:
            return self._best_set
        lowers, uppers = self._bounds(state)
        gaps = self._gap_indices(lowers, uppers)
        return np.sort(np.argsort(gaps, kind="stable")[: self.k])


class SuccessiveAcceptsRejects(Policy):
    """Phased elimination on a fixed budget.

    The budget is split into K-1 phases with logarithmically balanced
    lengths.  Each phase samples every active arm equally, then removes the
    arm with the largest empirical boundary gap, accepting it if it sits
    above the boundary.
    """

    name = "sar"
    fixed_confidence_ok = False

    def __init__(self, k: int, budget: int):
        self.k = k
        self.budget = budget

    @staticmethod
    def schedule(n_arms: int, budget: int) -> list[int]:
        """Cumulative per-arm pull targets n_1..n_{K-1} for each phase."""
        if budget <= n_arms:
            raise ValueError("budget must exceed the number of arms")
        log_bar = 0.5 + sum(1.0 / i for i in range(2, n_arms + 1))
        return [int(np.ceil((budget - n_arms) / (log_bar * (n_arms + 1 - p))))
                for p in range(1, n_arms)]

    def runner_initializes(self) -> bool:
        return False

    def reset(self, family, n_arms, rng):
        self.active = list(range(n_arms))
        self.selected: list[int] = []
        self._targets = self.schedule(n_arms, self.budget)
        self._phase = 0

    def arms_to_pull(self, state: BanditState, rng: np.random.Generator) -> list[int]:
        if self._phase >= len(self._targets) or len(self.active) <= 1:
            return []
        prev = self._targets[self._phase - 1] if self._phase > 0 else 0
        block = self._targets[self._phase] - prev
        # round-major order so budget truncation still covers every arm
        return [arm for _ in range(max(block, 0)) for arm in self.active]

    def observe(self, state: BanditState) -> None:
        if self._phase >= len(self._targets) or len(self.active) <= 1:
            return
        means = state.means()
        ranked = sorted(self.active, key=lambda a: (-means[a], a))
        slots = self.k - len(self.selected)
        gaps = {}
        for pos, arm in enumerate(ranked, start=1):
            if slots <= 0:
                gaps[arm] = means[ranked[0]] - means[arm]
            elif slots >= len(ranked):
                gaps[arm] = means[arm] - means[ranked[-1]]
            elif pos <= slots:
                gaps[arm] = means[arm] - means[ranked[slots]]
            else:
                gaps[arm] = means[ranked[slots - 1]] - means[arm]
        removed = max(ranked, key=lambda a: (gaps[a], -a))
        self.active.remove(removed)
        if 0 < slots <= len(ranked) - 1 and means[removed] > means[ranked[slots]]:
            self.selected.append(removed)
        elif slots >= len(ranked):
            self.selected.append(removed)
        self._phase += 1

    def recommend(self, state: BanditState) -> np.ndarray:
        chosen = list(self.selected) + list(self.active)
        means = state.means()
        chosen = sorted(set(chosen), key=lambda a: (-means[a], a))
        if len(chosen) < self.k:
            chosen += [a for a in top_k_arms(means, state.n_arms) if a not in chosen]
        return np.sort(np.asarray(chosen[: self.k], dtype=int))


class OcbaPairwise(Policy):
    """Batched pair sampling guided by plug-in discrimination rates.

    After an initialization block, each decision finds the (top, bottom)
    pair with the smallest plug-in rate at the realized allocation and
    commits a batch of pulls to one of its arms.  The ``balance`` variant
    picks the side whose squared-count total is behind; the ``alternate``
    variant flips sides deterministically.
    """

    fixed_confidence_ok = False

    def __init__(self, k: int, variant: str = "balance", init_pulls: int = 10,
                 batch: int = 10):
        if variant not in ("balance", "alternate"):
            raise ValueError(f"unknown variant {variant!r}")
        self.k = k
        self.variant = variant
        self.init_pulls = init_pulls
        self.batch = batch
        self.name = f"ocba-{variant}"

    def runner_initializes(self) -> bool:
        return False

    def reset(self, family, n_arms, rng):
        self._side = 0

    def select_pair(self, state: BanditState) -> tuple[int, int]:
        means = state.means()
        top = state.empirical_top_k(self.k)
        mask = np.zeros(state.n_arms, dtype=bool)
        mask[top] = True
        bottom = np.nonzero(~mask)[0]
        pi = np.repeat(top, bottom.size)
        pj = np.tile(bottom, top.size)
        psi = state.counts / state.t
        rates = pair_transport_cost(state.family, pi, pj, means[pi], means[pj],
                                    psi[pi], psi[pj])
        pos = int(np.argmin(rates))
        return int(pi[pos]), int(pj[pos])

    def arms_to_pull(self, state: BanditState, rng: np.random.Generator) -> list[int]:
        if np.any(state.counts < self.init_pulls):
            deficits = np.maximum(self.init_pulls - state.counts, 0).astype(int)
            # round-major order so budget truncation still covers every arm
            return [arm for r in range(int(deficits.max()))
                    for arm in range(state.n_arms) if deficits[arm] > r]
        i, j = self.select_pair(state)
        top = state.empirical_top_k(self.k)
        mask = np.zeros(state.n_arms, dtype=bool)
        mask[top] = True
        if self.variant == "balance":
            take_top = float(np.sum(state.counts[mask] ** 2)) < float(np.sum(state.counts[~mask] ** 2))
        else:
            take_top = self._side == 0
            self._side = 1 - self._side
        return [i if take_top else j] * self.batch


_POLICY_SETTINGS = ("fixed-confidence", "fixed-budget", "posterior-level")


def make_policy(kind: str, k: int, *, delta: float | None = None,
                budget: int | None = None, instance: InstanceSpec | None = None,
                params: dict | None = None) -> Policy:
    """Build a policy from its config identifier.

    ``delta`` feeds the confidence-bound baselines, ``budget`` the phased and
    gap-index budget baselines; ``instance`` supplies the true complexity sum
    that the budget gap-index baseline receives as an oracle input.  Extra
    per-policy knobs arrive through ``params``.
    """
    params = dict(params or {})
    if kind == "uniform":
        return UniformRoundRobin(k)
    if kind == "kkt-ts":
        return KktThompson(k, mode="confidence")
    if kind == "kkt-ts-budget":
        return KktThompson(k, mode="budget")
    if kind == "dt-ts":
        return DirectTrackingThompson(k, solver_iters=int(params.pop("solver_iters", 100)))
    if kind == "c-tracking":
        return CTracking(k, solver_iters=int(params.pop("solver_iters", 50)))
    if kind == "d-tracking":
        return DTracking(k, solver_iters=int(params.pop("solver_iters", 50)))
    if kind == "kl-lucb":
        _need(delta is not None, "kl-lucb needs delta")
        return KlLucb(k, delta)
    if kind == "kl-elimination":
        _need(delta is not None, "kl-elimination needs delta")
        return KlElimination(k, delta)
    if kind == "ugape-confidence":
        _need(delta is not None, "ugape-confidence needs delta")
        return UGapE(k, delta=delta)
    if kind == "ugape-budget":
        _need(budget is not None, "ugape-budget needs a budget")
        complexity = params.pop("complexity", None)
        if complexity is None:
            _need(instance is not None, "ugape-budget needs the instance or an explicit complexity")
            from .stopping import gaps_and_complexity

            _, complexity = gaps_and_complexity(instance)
        return UGapE(k, a=float(params.pop("a", 5.0)), budget=budget, complexity=complexity)
    if kind == "sar":
        _need(budget is not None, "sar needs a budget")
        return SuccessiveAcceptsRejects(k, budget)
    if kind in ("ocba-balance", "ocba-alternate"):
        return OcbaPairwise(k, variant=kind.removeprefix("ocba-"),
                            init_pulls=int(params.pop("init_pulls", 10)),
                            batch=int(params.pop("batch", 10)))
    raise ValueError(f"unknown policy {kind!r}")


def _need(condition: bool, message: str) -> None:
    if not condition:
        raise ValueError(message)


POLICY_KINDS = (
    "uniform", "kkt-ts", "kkt-ts-budget", "dt-ts", "c-tracking", "d-tracking",
    "kl-lucb", "kl-elimination", "ugape-confidence", "ugape-budget", "sar",
    "ocba-balance", "ocba-alternate",
)
