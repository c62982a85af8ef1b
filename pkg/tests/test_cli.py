import json
from pathlib import Path

import numpy as np
import pytest

from xcebra import cli


def run(args):
    return cli.main(args)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Tiny end-to-end pipeline shared by the CLI tests."""
    ws = tmp_path_factory.mktemp("cliws")
    ds = ws / "ds"
    assert run(["generate", "--set", f"out={ds}", "--set", "T=1200"]) == 0
    runout = ws / "run"
    assert run([
        "train", "--set", f"dataset={ds}", "--set", f"out={runout}",
        "--set", "steps=60", "--set", "ramp_start=10", "--set", "ramp_end=20",
        "--set", "batch_size=64", "--set", "negatives=64",
    ]) == 0
    assert run([
        "attribute", "--set", f"dataset={ds}",
        "--set", f"checkpoint={runout / 'checkpoint'}",
        "--set", f"out={runout / 'attribution'}",
    ]) == 0
    assert run([
        "evaluate", "--set", f"dataset={ds}",
        "--set", f"checkpoint={runout / 'checkpoint'}",
        "--set", f"attribution={runout / 'attribution'}",
        "--set", f"out={runout}",
    ]) == 0
    return ws


def test_generate_outputs(workspace):
    ds = workspace / "ds"
    meta = json.loads((ds / "meta.json").read_text())
    assert meta["T"] == 1200
    assert (ds / "x.f64").exists() and (ds / "A.u8").exists()


def test_generate_determinism(workspace, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert run(["generate", "--set", f"out={out}", "--set", "T=300",
                    "--set", "seed=5"]) == 0
    assert (a / "x.f64").read_bytes() == (b / "x.f64").read_bytes()


def test_train_artifacts(workspace):
    runout = workspace / "run"
    trace = (runout / "trace.csv").read_text().splitlines()
    assert trace[0] == "step,infonce,reg,lambda,gof"
    assert float(trace[1].split(",")[3]) == 0.0  # lambda ramp starts at zero
    tj = json.loads((runout / "train.json").read_text())
    assert tj["config"]["mode"] == "hybrid"
    assert (runout / "checkpoint" / "meta.json").exists()


def test_attribute_and_evaluate_artifacts(workspace):
    runout = workspace / "run"
    info = json.loads((runout / "attribution" / "attribution.json").read_text())
    scores = np.fromfile(runout / "attribution" / "scores.f64", dtype="<f8")
    assert scores.size == info["shape"][0] * info["shape"][1]
    metrics = json.loads((runout / "metrics.json").read_text())
    assert "auroc" in metrics and "collapse_score" in metrics and "r2" in metrics
    roc = (runout / "roc.csv").read_text().splitlines()
    assert roc[0] == "threshold,fpr,tpr"


def test_report_aggregates(workspace, tmp_path):
    rep = tmp_path / "rep"
    assert run(["report", "--set", f'runs=["{workspace / "run"}"]',
                "--set", f"out={rep}"]) == 0
    report = json.loads((rep / "report.json").read_text())
    assert "metrics" in list(report["runs"].values())[0]
    assert (rep / "report.txt").exists()


def test_simulate_with_metrics(tmp_path):
    out = tmp_path / "nav"
    assert run(["simulate", "--set", f"out={out}", "--set", "T=600",
                "--set", "n_per_type=5", "--set", "ratemap_bins=20"]) == 0
    meta = json.loads((out / "meta.json").read_text())
    assert len(meta["spatial_information"]) == 20
    assert len(meta["grid_score"]) == 20


def test_simulate_noise_sweep(tmp_path):
    out = tmp_path / "sweep"
    assert run(["simulate", "--set", f"out={out}", "--set", "T=300",
                "--set", "n_per_type=3", "--set", "noise_sweep=true",
                "--set", "cell_metrics=false"]) == 0
    dirs = sorted(p.name for p in out.iterdir())
    assert len(dirs) == 6
    assert "noise_0" in dirs and "noise_0.5" in dirs


def test_config_error_exit_codes(workspace, tmp_path):
    # unknown key
    assert run(["train", "--set", "bogus=1"]) == 2
    # malformed override
    assert run(["train", "--set", "steps"]) == 2
    # refusing to overwrite without force
    assert run(["generate", "--set", f"out={workspace / 'ds'}"]) == 2
    assert run(["generate", "--set", f"out={workspace / 'ds'}", "--force"]) == 0
    # config file with unknown key
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"definitely_not_a_key": 1}))
    assert run(["generate", "--config", str(bad)]) == 2


def test_config_file_and_overrides(tmp_path):
    cfgf = tmp_path / "gen.json"
    cfgf.write_text(json.dumps({"T": 250, "seed": 3}))
    out = tmp_path / "ds"
    assert run(["generate", "--config", str(cfgf), "--set", f"out={out}"]) == 0
    assert json.loads((out / "meta.json").read_text())["T"] == 250


def test_benchmark_tiny_grid(workspace, tmp_path):
    out = tmp_path / "bm"
    assert run([
        "benchmark", "--set", f"dataset={workspace / 'ds'}", "--set", f"out={out}",
        "--set", 'modes=["time"]', "--set", "regularized=[true]",
        "--set", "seeds=[0]", "--set", 'methods=["inverted_neuron_gradient"]',
        "--set", "steps=40", "--set", "ramp_start=10", "--set", "ramp_end=20",
        "--set", "batch_size=64", "--set", "negatives=64",
    ]) == 0
    lines = (out / "benchmark.csv").read_text().splitlines()
    assert lines[0] == "method,mode,regularized,seed,auroc,ci_lo,ci_hi,gof,r2,seconds"
    assert len(lines) == 2
    summary = json.loads((out / "benchmark.json").read_text())["summary"]
    assert "inverted_neuron_gradient|time|reg" in summary
