import json

import numpy as np
import pytest

from shmrom import cli
from shmrom.integrator import IntegrationError
from shmrom.io import read_container

from conftest import CONFIGS

SMOKE = str(CONFIGS / "portal_smoke.yaml")


def run(ws, *args):
    return cli.main(["--config", SMOKE, "--workspace", str(ws), *args])


@pytest.fixture(scope="module")
def pipeline_ws(tmp_path_factory):
    ws = tmp_path_factory.mktemp("smoke")
    assert run(ws, "mesh-gen") == 0
    assert run(ws, "rom-build") == 0
    assert run(ws, "dataset-gen", "--count", "60") == 0
    assert run(ws, "train", "--epochs", "3") == 0
    return ws


def test_stage_artifacts(pipeline_ws):
    for name in ("mesh.shm", "fom.shm", "rom.shm", "model.shm", "snapshot_samples.csv",
                 "datasets/train/train.shm", "datasets/train/val.shm", "datasets/train/dataset.json",
                 "reports/training_curves.csv"):
        assert (pipeline_ws / name).exists(), name
    rom = read_container(pipeline_ws / "rom.shm", kind="rom")
    assert rom.meta["W"] == rom["basis"].shape[1]
    assert read_container(pipeline_ws / "model.shm", kind="fcn_model").meta["train_config"]["epochs"] == 3


def test_fom_solve(pipeline_ws, capsys):
    assert run(pipeline_ws, "fom-solve", "--g", "2", "--delta", "0.2") == 0
    c = read_container(pipeline_ws / "fom_solution.shm")
    assert c["U"].shape == (200, 6)
    assert "200 samples x 6 sensors" in capsys.readouterr().out


def test_predict_from_npy_and_container(pipeline_ws, capsys):
    U = read_container(pipeline_ws / "datasets/train/val.shm")["U"]
    np.save(pipeline_ws / "one.npy", U[0])
    assert run(pipeline_ws, "predict", "--input", str(pipeline_ws / "one.npy")) == 0
    line = json.loads(capsys.readouterr().out.strip())
    assert line["instance"] == 0 and abs(sum(line["probabilities"]) - 1) < 1e-5
    assert run(pipeline_ws, "predict", "--input", str(pipeline_ws / "datasets/train/val.shm")) == 0
    assert len(capsys.readouterr().out.strip().splitlines()) == len(U)


def test_fom_test_protocol_and_report(pipeline_ws, capsys):
    assert run(pipeline_ws, "test", "--fidelity", "fom", "--count", "10") == 0
    out = capsys.readouterr().out
    assert "rows = true class" in out
    assert (pipeline_ws / "reports/confusion_fom.csv").exists()
    ds = read_container(pipeline_ws / "datasets/test_fom/test.shm")
    assert ds.meta["fidelity"] == "fom" and len(ds["labels"]) == 10
    assert run(pipeline_ws, "report") == 0
    assert "confusion_fom" in (pipeline_ws / "reports/summary.txt").read_text()


def test_sweep_single_cell(tmp_path):
    code = cli.main(["--config", SMOKE, "--workspace", str(tmp_path), "sweep", "--study", "eps_tol",
                     "--grid", "1e-3", "--count", "30", "--test-count", "5", "--epochs", "1"])
    assert code == 0
    text = (tmp_path / "sweeps/sweep_eps_tol.csv").read_text().splitlines()
    assert text[0].startswith("eps_tol,W,") and len(text) == 2 and text[1].endswith(",")


def test_config_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("name: x\nbogus_key: 1\n")
    assert cli.main(["--config", str(bad), "--workspace", str(tmp_path), "mesh-gen"]) == 2
    assert "bogus_key" in capsys.readouterr().err
    assert cli.main(["--threads", "0", "--config", SMOKE, "--workspace", str(tmp_path), "mesh-gen"]) == 2


def test_missing_artifact_exit_code(tmp_path, capsys):
    assert run(tmp_path, "train") == 2
    assert "missing" in capsys.readouterr().err
    assert run(tmp_path, "rom-build") == 2


def test_stale_artifact_exit_code(tmp_path, capsys):
    assert run(tmp_path, "mesh-gen", "--mesh-size", "0.5") == 0
    assert run(tmp_path, "fom-solve") == 2
    assert "different configuration" in capsys.readouterr().err


def test_numerical_failure_exit_code(tmp_path, monkeypatch):
    assert run(tmp_path, "mesh-gen") == 0

    def boom(*a, **k):
        raise IntegrationError("singular effective matrix")
    monkeypatch.setattr("shmrom.solvers.integrate", boom)
    assert run(tmp_path, "fom-solve") == 3
