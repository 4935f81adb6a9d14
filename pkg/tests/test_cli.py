import json
import subprocess
import sys

import pytest

from lanemerge import __version__
from lanemerge.cli import main
from lanemerge.sim.scenario import four_vehicle_scenario


def run(capsys, *argv):
    code = main(list(argv))
    return code, capsys.readouterr().out


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("cli")


@pytest.fixture(scope="module")
def model_path(workdir):
    assert main(["train-dqn", "--steps", "300", "--scenarios", "40", "--out", str(workdir / "dqn")]) == 0
    return workdir / "dqn" / "model.json"


def test_version(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert __version__ in capsys.readouterr().out


def test_subcommand_version(capsys):
    with pytest.raises(SystemExit):
        main(["simulate", "--version"])
    assert __version__ in capsys.readouterr().out


def test_dataset_to_classifiers(capsys, workdir):
    csv_path = workdir / "traj.csv"
    code, out = run(capsys, "synth-trajectories", "--out", str(csv_path), "--duration", "120", "--json")
    assert code == 0 and json.loads(out)["rows"] > 0
    code, out = run(capsys, "extract", "--input", str(csv_path), "--out", str(workdir / "ds"), "--json")
    assert code == 0 and json.loads(out)["instances"] > 0
    code, out = run(capsys, "train-classifiers", "--dataset", str(workdir / "ds"), "--task", "merge", "--algo", "dt",
                    "--out", str(workdir / "models"))
    assert code == 0
    header, row = out.splitlines()[:2]
    assert header.split()[:2] == ["task", "algo"] and row.split()[:2] == ["merge", "dt"]
    assert (workdir / "models" / "merge_dt.json").exists()


def test_train_dqn_outputs(capsys, workdir, model_path):
    assert model_path.exists()
    for name in ("rewards.csv", "reward_histogram.csv", "config.json", "report.json"):
        assert (model_path.parent / name).exists()
    code, out = run(capsys, "train-dqn", "--steps", "100", "--scenarios", "20", "--variant", "negative",
                    "--out", str(workdir / "neg"), "--json")
    assert code == 0
    assert json.loads(out)["variant"] == "negative"


def test_simulate_replay_report(capsys, workdir, model_path):
    code, out = run(capsys, "simulate", "--model", str(model_path), "--seed", "3", "--out", str(workdir / "sim"),
                    "--json")
    doc = json.loads(out)
    assert code == {"merged": 0, "violation": 1, "no_merge": 2}[doc["outcome"]]
    log_path = doc["log"]
    code, out = run(capsys, "replay", "--log", log_path, "--json")
    lines = [json.loads(line) for line in out.splitlines()]
    assert code == 0 and lines and all(set(d) == {"t", "to", "message"} for d in lines)
    code, out = run(capsys, "report", "--sim-log", log_path, "--reward-log", str(model_path.parent / "rewards.csv"),
                    "--out", str(workdir / "report"), "--json")
    assert code == 0
    assert (workdir / "report" / "accel_ecdf.csv").exists()
    assert "notes" in json.loads(out)


def test_simulate_custom_scenario_with_overrides(capsys, workdir, model_path):
    four_vehicle_scenario().save(workdir / "sc.json")
    code, out = run(capsys, "simulate", "--scenario", str(workdir / "sc.json"), "--model", str(model_path),
                    "--loss", "1.0", "--out", str(workdir / "lossy"), "--json")
    doc = json.loads(out)
    assert doc["counters"]["delivered"] == 0 and doc["counters"]["dropped"] > 0
    assert code == 2


def test_simulate_connection_refused(capsys, workdir):
    code, _ = run(capsys, "simulate", "--orchestrator", "127.0.0.1:1", "--out", str(workdir / "refused"))
    assert code == 4


def test_report_without_inputs(capsys, workdir):
    code, out = run(capsys, "report", "--out", str(workdir / "empty"))
    assert code == 0 and "note:" in out


def test_serve_and_simulate_over_tcp(workdir, model_path):
    proc = subprocess.Popen(
        [sys.executable, "-m", "lanemerge.cli", "serve", "--listen", "127.0.0.1:0", "--model", str(model_path),
         "--json", "--log", str(workdir / "orch-log")],
        stdout=subprocess.PIPE, text=True,
    )
    try:
        addr = json.loads(proc.stdout.readline())["listening"]
        res = subprocess.run(
            [sys.executable, "-m", "lanemerge.cli", "simulate", "--orchestrator", addr, "--model", str(model_path),
             "--out", str(workdir / "tcp"), "--json"],
            capture_output=True, text=True, timeout=300,
        )
        doc = json.loads(res.stdout)
        assert res.returncode in (0, 1, 2) and doc["outcome"] != "aborted"
        assert doc["counters"]["delivered"] > 0
    finally:
        proc.terminate()
        proc.wait(timeout=10)
    assert (workdir / "orch-log" / "orchestrator.ndjson").exists()


def test_bad_subcommand():
    with pytest.raises(SystemExit) as exc:
        main(["fly"])
    assert exc.value.code == 2
