import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from monoflow.cli import EXIT_NUMERICAL, EXIT_OK, EXIT_VALIDATION, main
from monoflow.errors import InvalidInputError, ParameterViolation
from monoflow.experiments import RunConfig, load_config, max_threads, parse_beta, run, sweep

FIG1 = {"preset": "example1", "mode": "continuous", "r": 1, "alpha": 8, "theta": 0.25,
        "beta": {"family": "constant", "c": 1}, "T": 1000}
PD_COLUMNS = ["tau", "norm_V", "gap", "energy", "f_gap", "feasibility", "lagrangian_gap",
              "grad_gap", "adjoint_gap"]


# -- configuration ----------------------------------------------------------------

def test_minimal_config_is_valid():
    cfg = load_config(FIG1)
    assert cfg.mode == "continuous" and cfg.integrator.horizon == 1000
    assert cfg.schedule.family == "constant" and not cfg.warnings


def test_discrete_box_rejection_names_rule():
    with pytest.raises(ParameterViolation) as exc:
        load_config({**FIG1, "mode": "discrete", "theta": 0.3})
    assert any("theta < 1/4" in v for v in exc.value.violations)


def test_continuous_box_rejection_names_rule():
    with pytest.raises(ParameterViolation) as exc:
        load_config({**FIG1, "r": 0.5, "theta": 0.2})
    assert any("theta > 2/alpha = 0.25" in v for v in exc.value.violations)


def test_force_keeps_violations_as_warnings():
    cfg = load_config({**FIG1, "r": 0.5, "theta": 0.25, "force": True})
    assert cfg.warnings and cfg.force


def test_config_sources(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps(FIG1))
    assert load_config(str(path)).to_dict() == load_config(json.dumps(FIG1)).to_dict()
    with pytest.raises(InvalidInputError):
        load_config(str(tmp_path / "missing.json"))
    with pytest.raises(InvalidInputError):
        load_config("{not json")


@pytest.mark.parametrize("bad", [
    {"r": "abc"}, {"unknown_key": 1}, {"mode": "hybrid"}, {"preset": "example9"},
    {"beta": "weird"}, {"beta": "power"}, {"T": -5}, {"sample_count": 1},
])
def test_malformed_configs_are_invalid_input(bad):
    with pytest.raises(InvalidInputError):
        load_config({**FIG1, **bad})


def test_missing_required_and_source_keys():
    with pytest.raises(InvalidInputError):
        load_config({"preset": "example1", "r": 1, "alpha": 8})
    with pytest.raises(InvalidInputError):
        load_config({"r": 1, "alpha": 8, "theta": 0.25})


def test_parse_beta_strings():
    assert parse_beta("constant") == {"family": "constant", "c": 1.0}
    assert parse_beta("power:1") == {"family": "power", "p": 1.0, "c": 1.0}
    assert parse_beta("exponential:3") == {"family": "exponential", "delta": 3.0}
    cfg = load_config({**FIG1, "r": 0.5, "theta": 1 / 3, "delta": 2, "beta": "exponential"})
    assert cfg.schedule.family == "exponential_continuous"
    dcfg = load_config({"preset": "example2", "mode": "discrete", "r": 0.5, "alpha": 8,
                        "theta": 0.3, "delta": 1, "beta": "exponential"})
    assert dcfg.schedule.family == "exponential_discrete"


def test_round_trip_through_dict():
    cfg = load_config({**FIG1, "energy": {"lambda": 1.5}})
    again = RunConfig.from_dict(cfg.to_dict())
    assert again.to_dict() == cfg.to_dict()


# -- runs and artifacts ------------------------------------------------------------

SHORT = {**FIG1, "T": 50, "sample_count": 200, "name": "short"}


def test_run_writes_csv_and_summary(tmp_path):
    res = run(load_config(SHORT), tmp_path)
    assert res.ok
    with open(res.csv_path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == PD_COLUMNS
    assert len(rows) == 201
    assert all(np.isfinite(float(x)) for row in rows[1:] for x in row)
    summary = json.loads(res.summary_path.read_text())
    for key in ("config", "rates", "decay_products", "boundedness", "energy", "transient_index",
                "wall_time", "status", "terminal"):
        assert key in summary
    assert RunConfig.from_dict(summary["config"]).to_dict() == summary["config"]


def test_csv_is_bit_stable(tmp_path):
    a = run(load_config(SHORT), tmp_path / "a")
    b = run(load_config(SHORT), tmp_path / "b")
    assert a.csv_path.read_bytes() == b.csv_path.read_bytes()


def test_example2_discrete_run(tmp_path):
    cfg = load_config({"preset": "example2", "n": 6, "mode": "discrete", "r": 1, "alpha": 8,
                       "theta": 0.24, "k_max": 500, "name": "ex2"})
    res = run(cfg, tmp_path)
    assert res.ok
    header = res.csv_path.read_text().splitlines()[0]
    assert header == "tau,norm_V,gap,energy"


def test_divergence_truncates_and_flags(tmp_path):
    cfg = load_config({**FIG1, "method": "rk4_fixed", "step": 5.0, "name": "blowup"})
    res = run(cfg, tmp_path)
    assert res.summary["status"] == "numerical_error"
    assert res.summary["error"]["type"] == "DivergenceError"
    lines = res.csv_path.read_text().splitlines()
    assert 2 < len(lines) < 2001
    for line in lines[1:]:
        assert all(np.isfinite(float(x)) for x in line.split(","))


# -- sweeps -------------------------------------------------------------------------

def test_sweep_isolates_rejected_runs(tmp_path):
    base = {**FIG1, "T": 20, "sample_count": 50, "name": "sw"}
    out = sweep(base, "theta", [0.25, -1.0, 0.3], tmp_path, threads=2)
    status = [row["status"] for row in out["runs"]]
    assert status == ["ok", "rejected", "ok"]
    assert (tmp_path / "sweep_summary.json").is_file()
    table = (tmp_path / "sweep_summary.csv").read_text().splitlines()
    assert len(table) == 4


def test_sweep_over_beta_family(tmp_path):
    base = {"preset": "example2", "n": 6, "r": 0.5, "alpha": 8, "theta": 1 / 3, "delta": 2,
            "T": 20, "sample_count": 50, "name": "fam"}
    out = sweep(base, "beta-family", ["constant", "power:1", "exponential"], tmp_path, threads=3)
    assert [r["status"] for r in out["runs"]] == ["ok", "ok", "ok"]
    assert out["axis"] == "beta"


def test_sweep_rejects_unknown_axis():
    with pytest.raises(InvalidInputError):
        sweep(FIG1, "gamma", [1, 2])


def test_thread_cap_from_environment(monkeypatch):
    monkeypatch.setenv("MONOFLOW_THREADS", "3")
    assert max_threads() == 3
    monkeypatch.setenv("MONOFLOW_THREADS", "zero")
    with pytest.raises(InvalidInputError):
        max_threads()
    monkeypatch.delenv("MONOFLOW_THREADS")
    assert max_threads() >= 1


# -- command line -------------------------------------------------------------------

def test_cli_success(tmp_path, capsys):
    code = main(["--preset", "example1", "--r", "1", "--alpha", "8", "--theta", "0.25",
                 "--horizon", "20", "--samples", "40", "--out", str(tmp_path), "--name", "cli"])
    assert code == EXIT_OK
    assert (tmp_path / "cli.csv").is_file() and (tmp_path / "cli.summary.json").is_file()
    assert "status=ok" in capsys.readouterr().out


def test_cli_validation_failure(capsys):
    code = main(["--preset", "example1", "--mode", "discrete", "--r", "1", "--alpha", "8",
                 "--theta", "0.3"])
    assert code == EXIT_VALIDATION
    assert "theta < 1/4" in capsys.readouterr().err


def test_cli_missing_source_and_bad_config(tmp_path):
    assert main(["--r", "1"]) == EXIT_VALIDATION
    assert main(["--config", str(tmp_path / "nope.json")]) == EXIT_VALIDATION


def test_cli_numerical_failure(tmp_path):
    code = main(["--preset", "example1", "--r", "1", "--alpha", "8", "--theta", "0.25",
                 "--horizon", "1000", "--method", "rk4_fixed", "--step", "5", "--quiet",
                 "--out", str(tmp_path)])
    assert code == EXIT_NUMERICAL


def test_cli_config_file_with_override(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({**FIG1, "T": 10, "sample_count": 20}))
    code = main(["--config", str(path), "--theta", "0.3", "--out", str(tmp_path), "--quiet"])
    assert code == EXIT_OK
    summary = json.loads((tmp_path / "example1.summary.json").read_text())
    assert summary["config"]["theta"] == 0.3


def test_cli_sweep_exit_code(tmp_path, monkeypatch):
    monkeypatch.setenv("MONOFLOW_THREADS", "2")
    code = main(["--preset", "example1", "--r", "1", "--alpha", "8", "--theta", "0.25",
                 "--horizon", "10", "--samples", "20", "--out", str(tmp_path), "--quiet",
                 "--sweep", "theta=0.25,0.3"])
    assert code == EXIT_OK
    code = main(["--preset", "example1", "--r", "1", "--alpha", "8", "--theta", "0.25",
                 "--horizon", "10", "--samples", "20", "--out", str(tmp_path), "--quiet",
                 "--sweep", "theta=0.25,0.6"])
    assert code == EXIT_VALIDATION


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "monoflow", "--preset", "example2:4", "--r", "1",
                           "--alpha", "8", "--theta", "0.25", "--horizon", "5", "--samples", "10",
                           "--out", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "example2.csv").is_file()
