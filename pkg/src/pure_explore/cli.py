"""Command-line front end.

Four subcommands: ``solve`` (optimal allocation of an instance file),
``check`` (optimality report for a candidate allocation), ``simulate``
(experiment runner driven by a JSON config), and ``report`` (turn result
CSVs into plot-ready two-column series).

File formats are UTF-8 JSON in, CSV out (comma separator, LF endings,
mandatory header row); every number is serialized with 17 significant
digits, so reruns with identical configs are byte-identical.

Exit codes: 0 success, 1 failed check, 2 malformed input, 3 invalid
instance, 4 the round cap wiped out every replication of some policy.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .experiments import (
    AllocationConvergence,
    ExperimentConfig,
    ExperimentError,
    ExperimentResult,
    FixedBudget,
    FixedConfidence,
    PosteriorLevel,
    run_experiment,
)
from .families import FamilyKind, InvalidParameterError, RewardFamily
from .instance import InstanceSpec, InvalidInstanceError, as_allocation
from .optimality import check_structure
from .policies import POLICY_KINDS
from .solvers import make_solver

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_INPUT = 2
EXIT_INSTANCE = 3
EXIT_CAPPED = 4


class InputError(ValueError):
    """Malformed file or config document."""


# -- parsing -------------------------------------------------------------


def _require_keys(doc: dict, allowed: set[str], required: set[str], where: str) -> None:
    unknown = set(doc) - allowed
    if unknown:
        raise InputError(f"unknown keys in {where}: {sorted(unknown)}")
    missing = required - set(doc)
    if missing:
        raise InputError(f"missing keys in {where}: {sorted(missing)}")


def load_json(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise InputError(f"{path}: top level must be an object")
    return doc


def parse_instance(doc: dict) -> InstanceSpec:
    _require_keys(doc, {"family", "theta", "k", "sigma2"}, {"family", "theta", "k"}, "instance")
    family_name = str(doc["family"]).lower()
    theta = np.asarray(doc["theta"], dtype=float)
    try:
        kind = FamilyKind(family_name)
    except ValueError:
        raise InputError(f"unknown family {family_name!r}") from None
    if kind == FamilyKind.GAUSSIAN:
        if "sigma2" not in doc:
            raise InputError("gaussian instance needs sigma2")
        family = RewardFamily.gaussian(doc["sigma2"], n_arms=theta.size)
    else:
        family = RewardFamily(kind)
    return InstanceSpec(family, theta, int(doc["k"]))


_SETTING_KEYS = {
    "fixed-confidence": ({"kind", "delta", "threshold", "round_cap"}, {"delta"}),
    "fixed-budget": ({"kind", "budget", "budgets"}, set()),
    "posterior-level": ({"kind", "level", "trace_stride", "dense_until", "stride", "round_cap"},
                        {"level"}),
    "allocation-convergence": ({"kind", "iters", "solvers", "trace_points"}, {"iters"}),
}


def parse_setting(doc: dict):
    if "kind" not in doc:
        raise InputError("setting needs a 'kind'")
    kind = str(doc["kind"])
    if kind not in _SETTING_KEYS:
        raise InputError(f"unknown setting kind {kind!r}")
    allowed, required = _SETTING_KEYS[kind]
    _require_keys(doc, allowed, required, f"setting {kind}")
    if kind == "fixed-confidence":
        return FixedConfidence(delta=float(doc["delta"]),
                               threshold_kind=str(doc.get("threshold", "heuristic")),
                               round_cap=int(doc.get("round_cap", FixedConfidence(0.5).round_cap)))
    if kind == "fixed-budget":
        if "budgets" in doc:
            budgets = tuple(int(b) for b in doc["budgets"])
        elif "budget" in doc:
            budgets = (int(doc["budget"]),)
        else:
            raise InputError("fixed-budget setting needs 'budget' or 'budgets'")
        return FixedBudget(budgets=budgets)
    if kind == "posterior-level":
        defaults = PosteriorLevel(0.5)
        return PosteriorLevel(level=None if doc["level"] is None else float(doc["level"]),
                              trace_stride=int(doc.get("trace_stride", 0)),
                              dense_until=int(doc.get("dense_until", defaults.dense_until)),
                              stride=int(doc.get("stride", defaults.stride)),
                              round_cap=int(doc.get("round_cap", defaults.round_cap)))
    return AllocationConvergence(iteration_counts=tuple(int(n) for n in doc["iters"]),
                                 solvers=tuple(doc.get("solvers", ("fwga", "kkt"))),
                                 trace_points=int(doc.get("trace_points", 100)))


def parse_config(doc: dict) -> tuple[ExperimentConfig, str]:
    _require_keys(doc, {"instance", "setting", "policies", "replications", "seed",
                        "solver", "output", "threads", "policy_params"},
                  {"instance", "setting", "policies", "replications", "seed"}, "config")
    instance = parse_instance(doc["instance"])
    setting = parse_setting(doc["setting"])
    policies = tuple(str(p) for p in doc["policies"])
    for policy in policies:
        if policy not in POLICY_KINDS:
            raise InputError(f"unknown policy {policy!r}; expected one of {POLICY_KINDS}")
    solver = dict(doc.get("solver", {}))
    _require_keys(solver, {"kind", "iters", "tau_scale"}, set(), "solver")
    config = ExperimentConfig(
        instance=instance,
        setting=setting,
        policies=policies,
        replications=int(doc["replications"]),
        seed=int(doc["seed"]),
        threads=int(doc.get("threads", 1)),
        policy_params=dict(doc.get("policy_params", {})),
        solver=solver,
    )
    return config, str(doc.get("output", "results"))


# -- serialization ---------------------------------------------------------


def config_to_doc(config: ExperimentConfig, output: str = "results") -> dict:
    """Inverse of :func:`parse_config`: a JSON-ready document for the config."""
    instance = config.instance
    inst_doc = {"family": instance.family.kind.value,
                "theta": instance.theta.tolist(), "k": int(instance.k)}
    if instance.family.variances is not None:
        inst_doc["sigma2"] = instance.family.variances.tolist()
    setting = config.setting
    if isinstance(setting, FixedConfidence):
        set_doc = {"kind": "fixed-confidence", "delta": setting.delta,
                   "threshold": setting.threshold_kind, "round_cap": setting.round_cap}
    elif isinstance(setting, FixedBudget):
        set_doc = {"kind": "fixed-budget", "budgets": list(setting.budgets)}
    elif isinstance(setting, PosteriorLevel):
        set_doc = {"kind": "posterior-level", "level": setting.level,
                   "trace_stride": setting.trace_stride, "dense_until": setting.dense_until,
                   "stride": setting.stride, "round_cap": setting.round_cap}
    else:
        set_doc = {"kind": "allocation-convergence",
                   "iters": list(setting.iteration_counts),
                   "solvers": list(setting.solvers), "trace_points": setting.trace_points}
    return {
        "instance": inst_doc,
        "setting": set_doc,
        "policies": list(config.policies),
        "replications": config.replications,
        "seed": config.seed,
        "threads": config.threads,
        "policy_params": config.policy_params,
        "solver": config.solver,
        "output": output,
    }


def fmt(value) -> str:
    """17-significant-digit text for floats; plain text otherwise."""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


def write_csv(path: Path, header: tuple[str, ...], rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) for v in row) + "\n")


def write_result(result: ExperimentResult, out_dir: str) -> list[Path]:
    out = Path(out_dir)
    written = []
    for name, (header, rows) in result.tables.items():
        path = out / f"{name}.csv"
        write_csv(path, header, rows)
        written.append(path)
    return written


# -- subcommands ------------------------------------------------------------


def _threads_default() -> int:
    env = os.environ.get("PURE_EXPLORE_THREADS", "")
    try:
        return max(int(env), 1)
    except ValueError:
        return 1


def cmd_solve(args) -> int:
    doc = load_json(args.instance)
    instance = parse_instance(doc)
    params: dict = {"mode": args.mode}
    if args.solver in ("fwga", "kkt"):
        params["n_iters"] = args.iters
        if args.stride:
            params["trace_every"] = args.stride
        if args.solver == "fwga" and args.tau_scale is not None:
            params["tau_scale"] = args.tau_scale
    else:
        params["step"] = args.grid_step
    solver = make_solver(args.solver, **params).fit(instance)
    report = check_structure(instance, solver.allocation_, mode=args.mode)
    print(f"solver: {args.solver}")
    print("allocation: " + " ".join(fmt(x) for x in solver.allocation_))
    print(f"value: {fmt(solver.value_)}")
    print(f"best_pair: {solver.best_pair_[0]} {solver.best_pair_[1]}")
    _print_report(report)
    if args.out:
        write_csv(Path(args.out), ("arm", "allocation"),
                  list(enumerate(solver.allocation_)))
    return EXIT_OK


def _print_report(report) -> None:
    print(f"worst_pairs: {' '.join(f'{i}-{j}' for i, j in report.equality_pairs)}")
    comps = [";".join((",".join(map(str, top)), ",".join(map(str, bot))))
             for top, bot in report.components]
    print(f"components: {' '.join(comps)}")
    print("balance_residuals: " + " ".join(fmt(r) for r in report.balance_residuals))
    print(f"coverage_ok: {int(report.rowcol_ok)}")
    print(f"monotone_ok: {int(report.monotone_ok)}")
    print(f"stationarity_residual: {fmt(report.kkt.stationarity)}")
    print(f"slackness_residual: {fmt(report.kkt.slackness)}")
    print(f"necessary_ok: {int(report.necessary_ok)}")
    print(f"kkt_ok: {int(report.kkt_ok)}")
    print(f"optimal: {int(report.optimal)}")


def cmd_check(args) -> int:
    instance = parse_instance(load_json(args.instance))
    doc = load_json(args.allocation)
    _require_keys(doc, {"psi", "mu"}, {"psi"}, "allocation file")
    try:
        psi = as_allocation(np.asarray(doc["psi"], dtype=float), instance.n_arms)
    except InvalidParameterError as exc:
        raise InputError(str(exc)) from exc
    report = check_structure(instance, psi, mode=args.mode, kkt_tol=args.tol)
    if "mu" in doc:
        from .optimality import check_kkt

        supplied = check_kkt(instance, psi, np.asarray(doc["mu"], dtype=float), mode=args.mode)
        print(f"supplied_mu_residual: {fmt(supplied.max_residual)}")
    _print_report(report)
    machine = (fmt(report.value), int(report.necessary_ok), int(report.kkt_ok),
               fmt(report.kkt.max_residual))
    print("result: " + ",".join(str(v) for v in machine))
    return EXIT_OK if report.optimal else EXIT_CHECK_FAILED


def cmd_simulate(args) -> int:
    config, out_dir = parse_config(load_json(args.config))
    if args.reps:
        config.replications = args.reps
    if args.seed is not None:
        config.seed = args.seed
    if args.threads:
        config.threads = args.threads
    if args.out:
        out_dir = args.out
    result = run_experiment(config)
    written = write_result(result, out_dir)
    for path in written:
        print(f"wrote {path}")
    if _all_capped(result):
        print("error: the round cap exhausted every replication of some policy", file=sys.stderr)
        return EXIT_CAPPED
    return EXIT_OK


def _all_capped(result: ExperimentResult) -> bool:
    for name, (header, rows) in result.tables.items():
        if "capped" not in header or not rows:
            continue
        pol_idx = header.index("policy")
        cap_idx = header.index("capped")
        by_policy: dict[str, list[int]] = {}
        for row in rows:
            by_policy.setdefault(row[pol_idx], []).append(int(row[cap_idx]))
        if any(flags and all(flags) for flags in by_policy.values()):
            return True
    return False


def _read_csv(path: str) -> tuple[tuple[str, ...], list[list[str]]]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    if not lines:
        raise InputError(f"{path} is empty")
    header = tuple(lines[0].split(","))
    return header, [ln.split(",") for ln in lines[1:]]


def cmd_report(args) -> int:
    out = Path(args.out)
    wrote_any = False
    for path in args.results:
        header, rows = _read_csv(path)
        if not rows:
            raise InputError(f"{path} has no data rows")
        if header == ("policy", "budget", "pfs", "stderr", "reps"):
            wrote_any |= _report_pfs(out, rows)
        elif header == ("solver", "run_iters", "iteration", "value", "gap"):
            wrote_any |= _report_gap(out, rows)
        elif header == ("rep", "policy", "tau", "correct", "capped", "seed"):
            wrote_any |= _report_confidence(out, rows)
        elif header == ("rep", "policy", "round", "prob_correct", "minus_log_miss"):
            wrote_any |= _report_posterior(out, rows)
        else:
            raise InputError(f"{path}: unrecognized table header {header}")
    if not wrote_any:
        raise InputError("no data series produced")
    return EXIT_OK


def _series_path(out: Path, tag: str) -> Path:
    return out / f"series_{tag}.csv"


def _report_pfs(out: Path, rows) -> bool:
    policies = sorted({r[0] for r in rows})
    for policy in policies:
        series = [(float(r[1]), float(np.log10(max(float(r[2]), 1e-300))))
                  for r in rows if r[0] == policy]
        series.sort()
        write_csv(_series_path(out, f"pfs_{policy}"), ("budget", "log10_pfs"), series)
        print(f"pfs series for {policy}: {len(series)} points")
    return bool(policies)


def _report_gap(out: Path, rows) -> bool:
    runs = sorted({(r[0], r[1]) for r in rows})
    for solver, run_iters in runs:
        series = [(float(np.log10(float(r[2]))), float(np.log10(max(float(r[4]), 1e-300))))
                  for r in rows if r[0] == solver and r[1] == run_iters and float(r[4]) > 0]
        series.sort()
        write_csv(_series_path(out, f"gap_{solver}_{run_iters}"),
                  ("log10_iteration", "log10_gap"), series)
        print(f"gap series for {solver} at {run_iters} iters: {len(series)} points")
    return bool(runs)


def _report_confidence(out: Path, rows) -> bool:
    policies = sorted({r[1] for r in rows})
    table = []
    for policy in policies:
        mine = [r for r in rows if r[1] == policy and r[4] == "0"]
        taus = np.array([float(r[2]) for r in mine])
        wrong = np.array([1 - int(r[3]) for r in mine])
        stderr = float(taus.std(ddof=1) / np.sqrt(taus.size)) if taus.size > 1 else 0.0
        table.append((policy, taus.size, float(taus.mean()), stderr, float(wrong.mean())))
        print(f"{policy}: mean_tau={fmt(float(taus.mean()))} stderr={fmt(stderr)} "
              f"delta_hat={fmt(float(wrong.mean()))}")
    write_csv(_series_path(out, "confidence_summary"),
              ("policy", "reps", "mean_tau", "stderr_tau", "delta_hat"), table)
    return bool(policies)


def _report_posterior(out: Path, rows) -> bool:
    policies = sorted({r[1] for r in rows})
    for policy in policies:
        by_round: dict[int, list[float]] = {}
        for r in rows:
            if r[1] == policy:
                by_round.setdefault(int(r[2]), []).append(float(r[4]))
        series = [(t, float(np.median(vals))) for t, vals in sorted(by_round.items())]
        write_csv(_series_path(out, f"posterior_{policy}"),
                  ("round", "median_minus_log_miss"), series)
        print(f"posterior series for {policy}: {len(series)} points")
    return bool(policies)


# -- entry point -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pure-explore",
                                     description="Top-k identification toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    solve = sub.add_parser("solve", help="solve the optimal allocation of an instance")
    solve.add_argument("--instance", required=True)
    solve.add_argument("--solver", choices=("fwga", "kkt", "grid"), default="fwga")
    solve.add_argument("--iters", type=int, default=100_000)
    solve.add_argument("--tau-scale", type=float, default=None)
    solve.add_argument("--grid-step", type=float, default=0.005)
    solve.add_argument("--mode", choices=("confidence", "budget"), default="confidence")
    solve.add_argument("--stride", type=int, default=0)
    solve.add_argument("--out", default=None)
    solve.set_defaults(func=cmd_solve)

    check = sub.add_parser("check", help="evaluate optimality conditions of an allocation")
    check.add_argument("--instance", required=True)
    check.add_argument("--allocation", required=True)
    check.add_argument("--mode", choices=("confidence", "budget"), default="confidence")
    check.add_argument("--tol", type=float, default=1e-2)
    check.set_defaults(func=cmd_check)

    simulate = sub.add_parser("simulate", help="run an experiment config")
    simulate.add_argument("--config", required=True)
    simulate.add_argument("--seed", type=int, default=None)
    simulate.add_argument("--reps", type=int, default=None)
    simulate.add_argument("--out", default=None)
    simulate.add_argument("--threads", type=int, default=_threads_default())
    simulate.set_defaults(func=cmd_simulate)

    report = sub.add_parser("report", help="aggregate result CSVs into plot series")
    report.add_argument("results", nargs="+")
    report.add_argument("--out", default="report")
    report.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except InvalidInstanceError as exc:
        print(f"invalid instance: {exc}", file=sys.stderr)
        return EXIT_INSTANCE
    except (ExperimentError, InvalidParameterError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
