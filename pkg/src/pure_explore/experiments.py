"""Replication harness for the four experiment families.

Each runner is deterministic given its configuration: replication r of
policy p draws from a dedicated generator seeded by (seed, p, r), so records
do not depend on execution order and scalar replications can be distributed
over worker processes.  The two policies compared in the large sweeps also
have batched lockstep engines (see :mod:`pure_explore.engines`); results are
then deterministic given (seed, replications) with one stream per batch.
"""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .engines import (
    BATCH_BUDGET_POLICIES,
    BATCH_CONFIDENCE_POLICIES,
    run_budget_batch,
    run_confidence_batch,
)
from .instance import InstanceSpec
from .optimality import optimality_gap, reference_solution
from .policies import Policy, make_policy
from .posterior_prob import posterior_prob_incorrect
from .solvers import FrankWolfeGradientAscent, KktTracking
from .state import BanditState
from .stopping import DEFAULT_ROUND_CAP, StoppingConfig, should_stop


class ExperimentError(ValueError):
    """The experiment configuration is structurally invalid."""


# -- settings ---------------------------------------------------------------


@dataclass(frozen=True)
class FixedConfidence:
    delta: float
    threshold_kind: str = "heuristic"
    round_cap: int = DEFAULT_ROUND_CAP

    def __post_init__(self):
        if not 0 < self.delta < 1:
            raise ExperimentError("delta must lie in (0, 1)")


@dataclass(frozen=True)
class FixedBudget:
    budgets: tuple[int, ...]

    def __post_init__(self):
        if not self.budgets or any(b <= 0 for b in self.budgets):
            raise ExperimentError("budgets must be positive")
        object.__setattr__(self, "budgets", tuple(sorted(int(b) for b in self.budgets)))


@dataclass(frozen=True)
class PosteriorLevel:
    #: ``None`` disables the crossing check: the run always lasts ``round_cap``
    #: rounds and only the trace is collected (used for rate diagnostics)
    level: float | None
    trace_stride: int = 0
    dense_until: int = 1_000
    stride: int = 10
    round_cap: int = 100_000

    def __post_init__(self):
        if self.level is not None and not 0 < self.level < 1:
            raise ExperimentError("posterior level must lie in (0, 1)")


@dataclass(frozen=True)
class AllocationConvergence:
    iteration_counts: tuple[int, ...]
    solvers: tuple[str, ...] = ("fwga", "kkt")
    trace_points: int = 100

    def __post_init__(self):
        if not self.iteration_counts or any(n < 1 for n in self.iteration_counts):
            raise ExperimentError("iteration counts must be positive")


Setting = FixedConfidence | FixedBudget | PosteriorLevel | AllocationConvergence


@dataclass
class ExperimentConfig:
    """One experiment: an instance, a setting, policies, and replication plan."""

    instance: InstanceSpec
    setting: Setting
    policies: tuple[str, ...]
    replications: int
    seed: int
    threads: int = 1
    policy_params: dict = field(default_factory=dict)
    solver: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.replications < 1:
            raise ExperimentError("replications must be at least 1")
        if not self.policies and not isinstance(self.setting, AllocationConvergence):
            raise ExperimentError("at least one policy is required")
        if self.threads < 1:
            raise ExperimentError("threads must be at least 1")


@dataclass
class ExperimentResult:
    """Named tables of plain rows, ready for CSV serialization."""

    tables: dict[str, tuple[tuple[str, ...], list[tuple]]]

    def table(self, name: str) -> list[tuple]:
        return self.tables[name][1]


# -- seeding -----------------------------------------------------------------


def replication_seed(master: int, *key: int) -> np.random.SeedSequence:
    """Counter-style stream split: independent of execution order."""
    return np.random.SeedSequence(master, spawn_key=tuple(int(x) for x in key))


def _policy_for(config: ExperimentConfig, kind: str, *, delta=None, budget=None) -> Policy:
    try:
        return make_policy(
            kind,
            config.instance.k,
            delta=delta,
            budget=budget,
            instance=config.instance,
            params=config.policy_params.get(kind),
        )
    except ValueError as exc:
        raise ExperimentError(f"policy {kind!r}: {exc}") from exc


# -- scalar replication loops -------------------------------------------------


def _initialize(instance: InstanceSpec, policy: Policy,
                rng: np.random.Generator) -> BanditState:
    state = BanditState.initial(instance.family, instance.n_arms)
    policy.reset(instance.family, instance.n_arms, rng)
    if policy.runner_initializes():
        for arm in range(instance.n_arms):
            state.apply(arm, instance.family.sample(arm, instance.theta[arm], rng))
    return state


def run_replication_fixed_confidence(instance: InstanceSpec, policy: Policy,
                                     stop_config: StoppingConfig,
                                     rng: np.random.Generator) -> tuple[int, bool, bool]:
    """One replication; returns (stopping time, correct, cap hit)."""
    state = _initialize(instance, policy, rng)
    k = instance.k
    capped = False
    while True:
        if state.t >= stop_config.round_cap:
            capped = True
            break
        if policy.own_stopping:
            if policy.should_stop(state):
                break
        elif should_stop(state, k, stop_config):
            break
        arms = policy.arms_to_pull(state, rng)
        for arm in arms:
            state.apply(arm, instance.family.sample(arm, instance.theta[arm], rng))
        policy.observe(state)
    chosen = np.sort(policy.recommend(state))
    correct = bool(np.array_equal(chosen, instance.top_arms))
    return state.t, correct, capped


def run_replication_fixed_budget(instance: InstanceSpec, policy: Policy, budget: int,
                                 rng: np.random.Generator) -> tuple[bool, np.ndarray]:
    """One replication truncated at ``budget`` pulls; returns (correct, counts)."""
    state = _initialize(instance, policy, rng)
    while state.t < budget:
        arms = policy.arms_to_pull(state, rng)
        if not arms:
            break
        room = budget - state.t
        truncated = len(arms) > room
        for arm in arms[:room]:
            state.apply(arm, instance.family.sample(arm, instance.theta[arm], rng))
        if not truncated:
            policy.observe(state)
    chosen = np.sort(policy.recommend(state))
    correct = bool(np.array_equal(chosen, instance.top_arms))
    return correct, state.counts.copy()


def run_replication_posterior_level(instance: InstanceSpec, policy: Policy,
                                    setting: PosteriorLevel,
                                    rng: np.random.Generator
                                    ) -> tuple[int, bool, list[tuple[int, float, float]]]:
    """One replication of the posterior-threshold experiment.

    The posterior probability of the true top set is evaluated every round up
    to ``dense_until`` and every ``stride`` rounds after; once a checkpoint
    crosses the level, the exact first crossing round inside the bracketing
    window is recovered by replaying the window's pulls from a snapshot.
    Returns (first crossing round, cap hit, trace rows).
    """
    state = _initialize(instance, policy, rng)
    top = instance.top_arms
    trace: list[tuple[int, float, float]] = []
    snapshot = (state.counts.copy(), state.sums.copy(), state.t)
    pending: list[tuple[int, float]] = []
    # P >= level is tested through its complement, which the quadrature
    # resolves in relative terms even when the miss probability is far below
    # the floating-point spacing around one
    miss_target = -1.0 if setting.level is None else 1.0 - setting.level

    def record(t: int, miss: float) -> None:
        if setting.trace_stride and t % setting.trace_stride == 0:
            trace.append((t, 1.0 - miss, float(-np.log(max(miss, 1e-320)))))

    while state.t < setting.round_cap:
        due = state.t <= setting.dense_until or state.t % setting.stride == 0
        if due:
            miss = posterior_prob_incorrect(state.posterior, top)
            record(state.t, miss)
            if miss <= miss_target:
                hit = _refine_crossing(instance, setting, top, snapshot, pending, state.t)
                return hit, False, trace
            snapshot = (state.counts.copy(), state.sums.copy(), state.t)
            pending.clear()
        arms = policy.arms_to_pull(state, rng)
        for arm in arms:
            reward = instance.family.sample(arm, instance.theta[arm], rng)
            state.apply(arm, reward)
            pending.append((arm, reward))
        policy.observe(state)
    return state.t, True, trace


def _refine_crossing(instance: InstanceSpec, setting: PosteriorLevel, top,
                     snapshot, pending, checkpoint: int) -> int:
    counts, sums, t0 = snapshot
    if t0 >= checkpoint or not pending:
        return checkpoint
    replay = BanditState(instance.family, t0, counts.copy(), sums.copy())
    for arm, reward in pending:
        replay.apply(arm, reward)
        if posterior_prob_incorrect(replay.posterior, top) <= 1.0 - setting.level:
            return replay.t
    return checkpoint


# -- worker entry points (picklable for process pools) ------------------------


def _confidence_chunk(args) -> list[tuple]:
    config, kind, stop_config, reps = args
    rows = []
    policy_index = config.policies.index(kind)
    for rep in reps:
        seq = replication_seed(config.seed, policy_index, rep)
        rng = np.random.default_rng(seq)
        policy = _policy_for(config, kind, delta=stop_config.delta)
        tau, correct, capped = run_replication_fixed_confidence(
            config.instance, policy, stop_config, rng)
        rows.append((rep, kind, tau, int(correct), int(capped),
                     int(seq.generate_state(1)[0])))
    return rows


def _budget_chunk(args) -> list[tuple]:
    config, kind, budget, reps = args
    rows = []
    policy_index = config.policies.index(kind)
    for rep in reps:
        seq = replication_seed(config.seed, policy_index, _budget_tag(config, budget), rep)
        rng = np.random.default_rng(seq)
        policy = _policy_for(config, kind, budget=budget)
        correct, counts = run_replication_fixed_budget(config.instance, policy, budget, rng)
        rows.append((rep, kind, budget, int(correct), counts))
    return rows


def _budget_tag(config: ExperimentConfig, budget: int) -> int:
    return list(config.setting.budgets).index(budget)


def _chunks(n_reps: int, n_chunks: int) -> list[range]:
    edges = np.linspace(0, n_reps, n_chunks + 1).astype(int)
    return [range(a, b) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def _map_chunks(worker, tasks, threads: int):
    if threads <= 1 or len(tasks) <= 1:
        return [worker(task) for task in tasks]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(worker, tasks))


# -- experiment runners --------------------------------------------------------


def run_fixed_confidence(config: ExperimentConfig) -> ExperimentResult:
    """Stopping-time records and summary per policy.

    Cap-hit replications are excluded from both the error rate and the mean
    stopping time; they appear in the records and the summary's cap count.
    """
    setting = config.setting
    stop_config = StoppingConfig(delta=setting.delta, kind=setting.threshold_kind,
                                 round_cap=setting.round_cap)
    records: list[tuple] = []
    summaries: list[tuple] = []
    for kind in config.policies:
        policy = _policy_for(config, kind, delta=setting.delta)
        if not policy.fixed_confidence_ok:
            raise ExperimentError(f"policy {kind!r} does not support the fixed-confidence setting")
        if kind in BATCH_CONFIDENCE_POLICIES and not policy.own_stopping:
            seq = replication_seed(config.seed, config.policies.index(kind), 0)
            batch = run_confidence_batch(config.instance, kind, stop_config,
                                         config.replications, seq)
            seed_val = int(seq.generate_state(1)[0])
            rows = [(rep, kind, int(batch.tau[rep]), int(batch.correct[rep]),
                     int(batch.capped[rep]), seed_val)
                    for rep in range(config.replications)]
        else:
            tasks = [(config, kind, stop_config, reps)
                     for reps in _chunks(config.replications, max(config.threads, 1) * 4)]
            rows = [row for chunk in _map_chunks(_confidence_chunk, tasks, config.threads)
                    for row in chunk]
        records.extend(rows)
        summaries.append(_summarize_confidence(kind, rows))
    header = ("rep", "policy", "tau", "correct", "capped", "seed")
    sum_header = ("policy", "reps", "capped", "mean_tau", "stderr_tau", "delta_hat")
    return ExperimentResult({"records": (header, records), "summary": (sum_header, summaries)})


def _summarize_confidence(kind: str, rows: list[tuple]) -> tuple:
    taus = np.array([r[2] for r in rows if not r[4]], dtype=float)
    wrong = np.array([1 - r[3] for r in rows if not r[4]], dtype=float)
    n_capped = sum(r[4] for r in rows)
    if taus.size == 0:
        return (kind, len(rows), n_capped, float("nan"), float("nan"), float("nan"))
    stderr = float(taus.std(ddof=1) / np.sqrt(taus.size)) if taus.size > 1 else 0.0
    return (kind, len(rows), n_capped, float(taus.mean()), stderr, float(wrong.mean()))


def run_fixed_budget(config: ExperimentConfig) -> ExperimentResult:
    """False-selection rate per (policy, budget) plus mean final allocations."""
    setting = config.setting
    pfs_rows: list[tuple] = []
    alloc_rows: list[tuple] = []
    n_arms = config.instance.n_arms
    if min(setting.budgets) < n_arms:
        raise ExperimentError("budgets must cover at least one pull per arm")
    for kind in config.policies:
        probe = _policy_for(config, kind, budget=max(setting.budgets))
        if not probe.fixed_budget_ok:
            raise ExperimentError(f"policy {kind!r} does not support the fixed-budget setting")
        if kind in BATCH_BUDGET_POLICIES:
            seq = replication_seed(config.seed, config.policies.index(kind), 0)
            batch = run_budget_batch(config.instance, kind, setting.budgets,
                                     config.replications, seq)
            for budget in setting.budgets:
                wrong = 1.0 - batch.correct[budget].astype(float)
                pfs_rows.append(_pfs_row(kind, budget, wrong))
                alloc_rows.extend((kind, budget, arm, float(batch.mean_allocation[budget][arm]))
                                  for arm in range(n_arms))
        else:
            for budget in setting.budgets:
                tasks = [(config, kind, budget, reps)
                         for reps in _chunks(config.replications, max(config.threads, 1) * 4)]
                rows = [row for chunk in _map_chunks(_budget_chunk, tasks, config.threads)
                        for row in chunk]
                wrong = np.array([1 - r[3] for r in rows], dtype=float)
                mean_counts = np.mean([r[4] for r in rows], axis=0)
                pfs_rows.append(_pfs_row(kind, budget, wrong))
                alloc_rows.extend((kind, budget, arm, float(mean_counts[arm] / budget))
                                  for arm in range(n_arms))
    pfs_header = ("policy", "budget", "pfs", "stderr", "reps")
    alloc_header = ("policy", "budget", "arm", "mean_share")
    return ExperimentResult({"pfs": (pfs_header, pfs_rows),
                             "allocation": (alloc_header, alloc_rows)})


def _pfs_row(kind: str, budget: int, wrong: np.ndarray) -> tuple:
    pfs = float(wrong.mean())
    stderr = float(np.sqrt(pfs * (1.0 - pfs) / wrong.size))
    return (kind, budget, pfs, stderr, int(wrong.size))


def run_posterior_level(config: ExperimentConfig) -> ExperimentResult:
    """First round at which the posterior probability of the true set crosses the level."""
    setting = config.setting
    records: list[tuple] = []
    trace_rows: list[tuple] = []
    for kind in config.policies:
        probe = _policy_for(config, kind)
        if not probe.bayesian:
            raise ExperimentError(f"policy {kind!r} is not a posterior-based policy")
        policy_index = config.policies.index(kind)
        for rep in range(config.replications):
            seq = replication_seed(config.seed, policy_index, rep)
            rng = np.random.default_rng(seq)
            policy = _policy_for(config, kind)
            hit, capped, trace = run_replication_posterior_level(
                config.instance, policy, setting, rng)
            records.append((rep, kind, hit, int(capped), int(seq.generate_state(1)[0])))
            trace_rows.extend((rep, kind, t, p, m) for t, p, m in trace)
    header = ("rep", "policy", "hit_round", "capped", "seed")
    trace_header = ("rep", "policy", "round", "prob_correct", "minus_log_miss")
    return ExperimentResult({"records": (header, records), "trace": (trace_header, trace_rows)})


def run_allocation_convergence(config: ExperimentConfig) -> ExperimentResult:
    """Objective and optimality-gap traces for each solver and iteration count.

    The reference saddle point comes from the polished grid oracle with dual
    weights fitted by nonnegative least squares.
    """
    setting = config.setting
    instance = config.instance
    psi_ref, mu_ref, _ = reference_solution(instance)
    rows: list[tuple] = []
    tau_scale = config.solver.get("tau_scale")
    for solver_kind in setting.solvers:
        for n_iters in setting.iteration_counts:
            stride = max(1, n_iters // setting.trace_points)
            if solver_kind == "fwga":
                solver = FrankWolfeGradientAscent(n_iters=n_iters, tau_scale=tau_scale,
                                                  trace_every=stride)
            elif solver_kind == "kkt":
                solver = KktTracking(n_iters=n_iters, trace_every=stride)
            else:
                raise ExperimentError(f"unknown trace solver {solver_kind!r}")
            solver.fit(instance)
            for point in solver.trace_:
                gap = optimality_gap(instance, point.allocation, point.pair_weights,
                                     psi_ref, mu_ref)
                rows.append((solver_kind, n_iters, point.iteration, point.value, gap))
    header = ("solver", "run_iters", "iteration", "value", "gap")
    return ExperimentResult({"trace": (header, rows)})


_RUNNERS = {
    FixedConfidence: run_fixed_confidence,
    FixedBudget: run_fixed_budget,
    PosteriorLevel: run_posterior_level,
    AllocationConvergence: run_allocation_convergence,
}


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    """Dispatch on the setting type."""
    return _RUNNERS[type(config.setting)](config)
