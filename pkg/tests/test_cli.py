import json

import pytest

import sane.training
from sane.cli import main
from sane.errors import NumericError

TINY = ["--set", "env.steps_per_task=120", "--set", "sane.hidden_dims=8",
        "--set", "schedule.eval_episodes=4", "--set", "sane.max_modules=3"]


def test_run_then_eval_and_lineage(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["run", *TINY, "--seed", "2", "-o", str(out)]) == 0
    assert "artifacts:" in capsys.readouterr().out
    assert (out / "returns.csv").exists()

    assert main(["eval", str(out), "--episodes", "3", "--out", str(tmp_path / "e.json")]) == 0
    report = json.loads(capsys.readouterr().out)
    assert len(report["tasks"]) == 3
    assert json.loads((tmp_path / "e.json").read_text()) == report

    assert main(["lineage", str(out), "--out", str(tmp_path / "l.dot")]) == 0
    assert (tmp_path / "l.dot").read_text() == (out / "lineage.dot").read_text()
    assert main(["lineage", str(out / "events.jsonl")]) == 0
    assert capsys.readouterr().out == (out / "lineage.dot").read_text()


def test_config_file_and_flags(tmp_path, capsys):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[run]\nmethod = oracle\n[env]\nsteps_per_task = 120\n"
                   "[sane]\nhidden_dims = 8\n")
    out = tmp_path / "o"
    assert main(["run", "-c", str(cfg), "--method", "single", "-o", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["method"] == "single"


def test_sweep(tmp_path, capsys):
    assert main(["sweep", *TINY, "--method", "single", "--seed-list", "0", "1",
                 "-o", str(tmp_path)]) == 0
    agg = json.loads(capsys.readouterr().out)
    assert agg["seeds"] == [0, 1]
    assert (tmp_path / "summary.json").exists()


@pytest.mark.parametrize("argv", [
    ["run", "--set", "sane.tau=2"],
    ["run", "--set", "tau=0.5"],
    ["run", "--set", "bogus.key=1"],
    ["run", "--config", "/nonexistent/x.ini"],
    ["eval", "/nonexistent/run"],
])
def test_config_errors_exit_2(argv, tmp_path, capsys):
    assert main(argv + ["-o", str(tmp_path)]) == 2
    assert "config error" in capsys.readouterr().err


def test_numeric_failure_exit_3(tmp_path, monkeypatch, capsys):
    def broken(*args, **kwargs):
        raise NumericError("injected")

    monkeypatch.setattr(sane.training, "module_update", broken)
    assert main(["run", *TINY, "-o", str(tmp_path)]) == 3
    assert (tmp_path / "checkpoint_failure.bin").exists()
    assert "numeric failure" in capsys.readouterr().err


def test_output_root_from_environment(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("SANE_OUTPUT_DIR", str(tmp_path))
    assert main(["run", *TINY, "--method", "single", "--seed", "4"]) == 0
    assert (tmp_path / "single_seed4" / "summary.json").exists()
