"""Command-line interface: wiring, determinism, exit codes, config."""

from __future__ import annotations

import hashlib
import json
import os
import subprocess
import sys

import pytest

CLI = [sys.executable, "-m", "lcscreen.cli"]


def run(args, cwd, check=True):
    proc = subprocess.run(CLI + args, cwd=cwd, capture_output=True, text=True)
    if check and proc.returncode != 0:
        raise AssertionError(f"{args} failed rc={proc.returncode}: "
                             f"{proc.stderr}\n{proc.stdout}")
    return proc


def digest(path) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """A tiny simulated study with a fitted draw store, shared per module."""
    ws = tmp_path_factory.mktemp("cli")
    run(["simulate", "--subjects", "40", "--sites", "5", "--seed", "1"], ws)
    run(["fit", "--data", "train.csv", "--classes", "4", "--burnin", "100",
         "--keep", "60", "--seed", "2"], ws)
    return ws


def test_simulate_outputs_and_determinism(tmp_path):
    a = tmp_path / "a"
    b = tmp_path / "b"
    for out in (a, b):
        run(["simulate", "--subjects", "30", "--sites", "4", "--seed", "9",
             "--out", str(out)], tmp_path)
    for name in ("train.csv", "test.csv", "truth.csv"):
        assert digest(a / name) == digest(b / name)
    # a different seed changes the data
    c = tmp_path / "c"
    run(["simulate", "--subjects", "30", "--sites", "4", "--seed", "10",
         "--out", str(c)], tmp_path)
    assert digest(a / "train.csv") != digest(c / "train.csv")


def test_fit_is_deterministic(workspace):
    run(["fit", "--data", "train.csv", "--classes", "4", "--burnin", "100",
         "--keep", "60", "--seed", "2", "--out", "refit.ndjson"], workspace)
    assert digest(workspace / "refit.ndjson") == digest(
        workspace / "fit.draws.ndjson")


def test_predict_then_region(workspace):
    run(["predict", "--draws", "fit.draws.ndjson", "--baseline-x", "10",
         "--baseline-y", "16", "--future-time", "4",
         "--history-x", "2:-1.0", "--history-y", "2:-2.0"], workspace)
    assert (workspace / "field.csv").exists()
    for algorithm in ("hdr", "branch"):
        run(["region", "--field", "field.csv", "--target", "0.8",
             "--algorithm", algorithm, "--out", f"{algorithm}.csv"], workspace)
        text = (workspace / f"{algorithm}.csv").read_text()
        assert text.startswith("row,col,x_lo,x_hi,y_lo,y_hi,mass,selected")
        assert ",1" in text


def test_screen_outputs_and_thread_invariance(workspace):
    for threads, out in (("1", "t1"), ("3", "t3")):
        run(["screen", "--draws", "fit.draws.ndjson", "--data", "test.csv",
             "--scenario", "first:2", "--algorithm", "branch",
             "--threads", threads, "--out", out], workspace)
    assert digest(workspace / "t1" / "report.csv") == digest(
        workspace / "t3" / "report.csv")
    assert digest(workspace / "t1" / "metrics.json") == digest(
        workspace / "t3" / "metrics.json")
    metrics = json.loads((workspace / "t1" / "metrics.json").read_text())
    assert metrics[0]["algorithm"] == "branch"
    # flagged subjects get a per-subject region dump
    report = (workspace / "t1" / "report.csv").read_text().strip().split("\n")
    flagged = [line.split(",")[0] for line in report[1:]
               if line.split(",")[8] in ("outside", "off_grid")]
    for sid in flagged:
        assert (workspace / "t1" / f"region_{sid}.csv").exists()


def test_metrics_covers_both_algorithms(workspace):
    run(["metrics", "--draws", "fit.draws.ndjson", "--data", "test.csv",
         "--scenario", "baseline", "--out", "m"], workspace)
    metrics = json.loads((workspace / "m" / "metrics.json").read_text())
    assert {m["algorithm"] for m in metrics} == {"hdr", "branch"}
    for m in metrics:
        assert m["target"] == 0.8


def test_best_config(workspace):
    run(["best-config", "--draws", "fit.draws.ndjson", "--data", "train.csv"],
        workspace)
    lines = (workspace / "best_config.csv").read_text().strip().split("\n")
    assert lines[0] == "subject_id,class"
    assert len(lines) == 1 + 28  # train split of 40 subjects at 0.7


def test_best_config_digest_mismatch(workspace):
    proc = run(["best-config", "--draws", "fit.draws.ndjson",
                "--data", "test.csv"], workspace, check=False)
    assert proc.returncode == 2
    assert "different dataset" in proc.stderr


def test_exit_code_usage_error(workspace):
    proc = run(["predict", "--draws", "fit.draws.ndjson", "--baseline-x", "0",
                "--baseline-y", "0", "--future-time", "4",
                "--grid", "bogus"], workspace, check=False)
    assert proc.returncode == 2
    assert "grid" in proc.stderr


def test_exit_code_data_error(workspace, tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("subject_id,site,endpoint,time,baseline,value\n"
                   "A,1,q,2,1,0\n")
    proc = run(["fit", "--data", str(bad), "--burnin", "1", "--keep", "1"],
               workspace, check=False)
    assert proc.returncode == 3
    assert "endpoint" in proc.stderr


def test_missing_file_is_usage_error(workspace):
    proc = run(["fit", "--data", "nope.csv"], workspace, check=False)
    assert proc.returncode == 2


def test_toml_config_defaults_and_flag_precedence(workspace):
    cfg = workspace / "cfg.toml"
    cfg.write_text('[region]\ntarget = 0.6\nalgorithm = "hdr"\n'
                   'out = "from_toml.csv"\n')
    run(["--config", str(cfg), "region", "--field", "field.csv"], workspace)
    assert (workspace / "from_toml.csv").exists()
    # an explicit flag beats the config file
    run(["--config", str(cfg), "region", "--field", "field.csv",
         "--out", "flag_wins.csv"], workspace)
    assert (workspace / "flag_wins.csv").exists()


def test_schedule_and_grid_flags(workspace):
    run(["screen", "--draws", "fit.draws.ndjson", "--data", "test.csv",
         "--scenario", "first:1", "--schedule", "2,4,6,8,10,12,14",
         "--grid=-20:20:2,-28:20:2", "--target", "0.9",
         "--out", "wide"], workspace)
    metrics = json.loads((workspace / "wide" / "metrics.json").read_text())
    assert metrics[0]["target"] == 0.9
