"""Command-line front end: subcommands, file schemas, exit codes, determinism."""
import json

import numpy as np
import pytest

from pure_explore.cli import (
    EXIT_CAPPED,
    EXIT_CHECK_FAILED,
    EXIT_INPUT,
    EXIT_INSTANCE,
    EXIT_OK,
    config_to_doc,
    main,
    parse_config,
)

EX31 = {"family": "gaussian", "theta": [0.51, 0.5, 0.0, -0.01, -0.092],
        "k": 2, "sigma2": 0.25}
REMARK = {"family": "gaussian", "theta": [1.0, 0.7, 0.0, -0.5], "k": 2, "sigma2": 0.25}


def write(tmp_path, name, doc):
    path = tmp_path / name
    path.write_text(json.dumps(doc), encoding="utf-8")
    return str(path)


def sim_config(tmp_path, **overrides):
    doc = {
        "instance": {"family": "gaussian", "theta": [0.9, 0.4, 0.1], "k": 1,
                     "sigma2": 0.25},
        "setting": {"kind": "fixed-confidence", "delta": 0.2},
        "policies": ["kkt-ts", "uniform"],
        "replications": 15,
        "seed": 77,
        "output": str(tmp_path / "out"),
    }
    doc.update(overrides)
    return doc


class TestSolve:
    def test_disconnected_example(self, tmp_path, capsys):
        inst = write(tmp_path, "inst.json", EX31)
        code = main(["solve", "--instance", inst, "--solver", "fwga",
                     "--iters", "20000"])
        out = capsys.readouterr().out
        assert code == EXIT_OK
        value = float(next(l for l in out.splitlines() if l.startswith("value:")).split()[1])
        assert value == pytest.approx(0.0568, abs=5e-4)

    def test_two_arm_symmetric(self, tmp_path, capsys):
        inst = write(tmp_path, "inst.json",
                     {"family": "gaussian", "theta": [1.0, 0.0], "k": 1, "sigma2": 0.25})
        code = main(["solve", "--instance", inst, "--solver", "grid",
                     "--grid-step", "0.01"])
        out = capsys.readouterr().out
        assert code == EXIT_OK
        alloc = [float(x) for x in
                 next(l for l in out.splitlines() if l.startswith("allocation:")).split()[1:]]
        np.testing.assert_allclose(alloc, [0.5, 0.5], atol=1e-6)

    def test_invalid_k_exits_three(self, tmp_path, capsys):
        inst = write(tmp_path, "inst.json",
                     {"family": "gaussian", "theta": [1.0, 0.0], "k": 2, "sigma2": 0.25})
        assert main(["solve", "--instance", inst]) == EXIT_INSTANCE

    def test_malformed_json_exits_two(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json", encoding="utf-8")
        assert main(["solve", "--instance", str(path)]) == EXIT_INPUT

    def test_unknown_keys_rejected(self, tmp_path):
        doc = dict(EX31)
        doc["variance"] = 0.25
        inst = write(tmp_path, "inst.json", doc)
        assert main(["solve", "--instance", inst]) == EXIT_INPUT

    def test_missing_file_exits_two(self):
        assert main(["solve", "--instance", "/nonexistent.json"]) == EXIT_INPUT


class TestCheck:
    def test_optimal_point_passes(self, tmp_path, capsys):
        inst = write(tmp_path, "inst.json", EX31)
        alloc = write(tmp_path, "alloc.json",
                      {"psi": [0.2185, 0.2371, 0.2185, 0.2026, 0.1232]})
        code = main(["check", "--instance", inst, "--allocation", alloc])
        out = capsys.readouterr().out
        assert code == EXIT_OK
        assert "optimal: 1" in out

    def test_uniform_point_fails_with_residuals(self, tmp_path, capsys):
        inst = write(tmp_path, "inst.json", EX31)
        alloc = write(tmp_path, "alloc.json", {"psi": [0.2] * 5})
        code = main(["check", "--instance", inst, "--allocation", alloc])
        out = capsys.readouterr().out
        assert code == EXIT_CHECK_FAILED
        assert "stationarity_residual:" in out

    def test_stationary_but_suboptimal_point(self, tmp_path, capsys):
        inst = write(tmp_path, "inst.json", REMARK)
        alloc = write(tmp_path, "alloc.json",
                      {"psi": [0.0482, 0.459, 0.4603, 0.0325]})
        code = main(["check", "--instance", inst, "--allocation", alloc])
        out = capsys.readouterr().out
        assert code == EXIT_CHECK_FAILED
        assert "necessary_ok: 1" in out
        assert "kkt_ok: 0" in out

    def test_supplied_mu_reported(self, tmp_path, capsys):
        inst = write(tmp_path, "inst.json",
                     {"family": "gaussian", "theta": [1.0, 0.0], "k": 1, "sigma2": 0.25})
        alloc = write(tmp_path, "alloc.json", {"psi": [0.5, 0.5], "mu": [1.0]})
        code = main(["check", "--instance", inst, "--allocation", alloc])
        out = capsys.readouterr().out
        assert code == EXIT_OK
        line = next(l for l in out.splitlines() if l.startswith("supplied_mu_residual:"))
        assert float(line.split()[1]) <= 1e-9


class TestSimulate:
    def test_fixed_confidence_schema_and_determinism(self, tmp_path, capsys):
        cfg = write(tmp_path, "cfg.json", sim_config(tmp_path))
        assert main(["simulate", "--config", cfg]) == EXIT_OK
        records = (tmp_path / "out" / "records.csv").read_bytes()
        header = records.split(b"\n", 1)[0]
        assert header == b"rep,policy,tau,correct,capped,seed"
        assert main(["simulate", "--config", cfg]) == EXIT_OK
        assert (tmp_path / "out" / "records.csv").read_bytes() == records

    def test_fixed_budget_sweep_schema(self, tmp_path, capsys):
        doc = sim_config(tmp_path, setting={"kind": "fixed-budget", "budgets": [20, 40]},
                         policies=["uniform", "sar"], replications=30)
        cfg = write(tmp_path, "cfg.json", doc)
        assert main(["simulate", "--config", cfg]) == EXIT_OK
        lines = (tmp_path / "out" / "pfs.csv").read_text().splitlines()
        assert lines[0] == "policy,budget,pfs,stderr,reps"
        assert len(lines) == 5  # header + 2 policies x 2 budgets

    def test_overrides(self, tmp_path, capsys):
        cfg = write(tmp_path, "cfg.json", sim_config(tmp_path, replications=50))
        out2 = str(tmp_path / "alt")
        assert main(["simulate", "--config", cfg, "--reps", "6", "--seed", "3",
                     "--out", out2]) == EXIT_OK
        lines = (tmp_path / "alt" / "records.csv").read_text().splitlines()
        assert len(lines) == 1 + 6 * 2

    def test_cap_exhaustion_exit_code(self, tmp_path, capsys):
        doc = sim_config(tmp_path,
                         instance={"family": "gaussian", "theta": [0.01, 0.0],
                                   "k": 1, "sigma2": 0.25},
                         setting={"kind": "fixed-confidence", "delta": 1e-9,
                                  "round_cap": 40},
                         policies=["uniform"], replications=4)
        cfg = write(tmp_path, "cfg.json", doc)
        assert main(["simulate", "--config", cfg]) == EXIT_CAPPED

    def test_unknown_policy_rejected(self, tmp_path):
        cfg = write(tmp_path, "cfg.json", sim_config(tmp_path, policies=["magic"]))
        assert main(["simulate", "--config", cfg]) == EXIT_INPUT

    def test_allocation_convergence_runs(self, tmp_path, capsys):
        doc = sim_config(tmp_path,
                         setting={"kind": "allocation-convergence", "iters": [200],
                                  "solvers": ["kkt"], "trace_points": 4},
                         policies=[])
        cfg = write(tmp_path, "cfg.json", doc)
        assert main(["simulate", "--config", cfg]) == EXIT_OK
        lines = (tmp_path / "out" / "trace.csv").read_text().splitlines()
        assert lines[0] == "solver,run_iters,iteration,value,gap"


class TestReport:
    def test_pfs_series(self, tmp_path, capsys):
        doc = sim_config(tmp_path, setting={"kind": "fixed-budget", "budgets": [20, 40]},
                         policies=["uniform"], replications=40)
        cfg = write(tmp_path, "cfg.json", doc)
        main(["simulate", "--config", cfg])
        rep_dir = str(tmp_path / "rep")
        code = main(["report", str(tmp_path / "out" / "pfs.csv"), "--out", rep_dir])
        assert code == EXIT_OK
        series = (tmp_path / "rep" / "series_pfs_uniform.csv").read_text().splitlines()
        assert series[0] == "budget,log10_pfs"
        assert len(series) == 3

    def test_gap_series_loglog(self, tmp_path, capsys):
        doc = sim_config(tmp_path,
                         setting={"kind": "allocation-convergence", "iters": [100],
                                  "solvers": ["fwga"], "trace_points": 5},
                         policies=[])
        cfg = write(tmp_path, "cfg.json", doc)
        main(["simulate", "--config", cfg])
        code = main(["report", str(tmp_path / "out" / "trace.csv"),
                     "--out", str(tmp_path / "rep")])
        assert code == EXIT_OK
        series = (tmp_path / "rep" / "series_gap_fwga_100.csv").read_text().splitlines()
        assert series[0] == "log10_iteration,log10_gap"

    def test_confidence_summary_series(self, tmp_path, capsys):
        cfg = write(tmp_path, "cfg.json", sim_config(tmp_path, replications=8))
        main(["simulate", "--config", cfg])
        code = main(["report", str(tmp_path / "out" / "records.csv"),
                     "--out", str(tmp_path / "rep")])
        assert code == EXIT_OK

    def test_empty_input_exits_two(self, tmp_path):
        empty = tmp_path / "empty.csv"
        empty.write_text("", encoding="utf-8")
        assert main(["report", str(empty), "--out", str(tmp_path / "rep")]) == EXIT_INPUT

    def test_header_only_exits_two(self, tmp_path):
        stub = tmp_path / "stub.csv"
        stub.write_text("policy,budget,pfs,stderr,reps\n", encoding="utf-8")
        assert main(["report", str(stub), "--out", str(tmp_path / "rep")]) == EXIT_INPUT


class TestConfigRoundTrip:
    @pytest.mark.parametrize("setting", [
        {"kind": "fixed-confidence", "delta": 0.05},
        {"kind": "fixed-budget", "budgets": [100, 200]},
        {"kind": "posterior-level", "level": 0.99, "trace_stride": 10},
        {"kind": "allocation-convergence", "iters": [100, 1000]},
    ])
    def test_parse_print_parse(self, tmp_path, setting):
        doc = sim_config(tmp_path, setting=setting)
        config, output = parse_config(doc)
        doc2 = config_to_doc(config, output)
        config2, output2 = parse_config(doc2)
        assert output2 == output
        assert config2.setting == config.setting
        assert config2.policies == config.policies
        assert config2.seed == config.seed
        assert config2.replications == config.replications
        np.testing.assert_array_equal(config2.instance.theta, config.instance.theta)
