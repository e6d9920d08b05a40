import json
import os

import pytest

from sgcde import checkpoint
from sgcde.cli import EXIT_CONFIG, EXIT_OK, EXIT_VERIFY, main
from sgcde.verify import check_names

SMALL = ["--set", "model.latent=16", "--set", "model.hidden=16", "--set", "train.batch_size=4",
         "--set", "train.val_every=10", "--set", "train.val_segments=4", "--set", "eval.stride=40"]


@pytest.fixture(autouse=True)
def _clean_env(monkeypatch):
    for k in list(os.environ):
        if k.startswith("SGCDE_"):
            monkeypatch.delenv(k)


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert main(["simulate", "--out", str(out), "--count", "8", "--seed", "1"]) == EXIT_OK
    return out


def run_pipeline(out):
    args = ["pipeline", "--out", str(out), "--set", "data.count=20", "--set", "train.steps=20"] + SMALL
    assert main(args) == EXIT_OK
    return json.loads((out / "report.json").read_text())


def test_pipeline_smoke_and_rerun(tmp_path):
    a = run_pipeline(tmp_path / "a")
    b = run_pipeline(tmp_path / "b")
    assert a == b
    methods = {r["method"] for r in a["rows"]}
    assert methods == {"sg-ncde", "cv", "sg", "conservational"}
    for name in ("data.jsonl", "model.json", "history.json", "training.png", "report.txt",
                 "report_rge.png", "report_nfe.png", "config.json", "sgcde.log"):
        assert (tmp_path / "a" / name).is_file(), name
    assert list((tmp_path / "a" / "csv").glob("rge_h*.csv"))
    assert list((tmp_path / "a" / "csv").glob("s2_traj*.csv"))


def test_simulate_writes_meta(dataset):
    lines = (dataset / "data.jsonl").read_text().splitlines()
    assert len(lines) == 8
    meta = json.loads((dataset / "data.jsonl.meta.json").read_text())
    assert meta
    assert json.loads((dataset / "simulate_config.json").read_text())["seed"] == 1


def test_filter_command(dataset, capsys):
    assert main(["filter", "--out", str(dataset), "--data", "data.jsonl"]) == EXIT_OK
    summary = json.loads(capsys.readouterr().out)
    assert summary["n"] == 8
    assert summary["smoothed_rge_deg"] < summary["noisy_rge_deg"]
    assert (dataset / "filtered.jsonl").is_file()


def test_eval_baselines_and_export(dataset, tmp_path):
    assert main(["eval", "--out", str(dataset), "--data", "data.jsonl", "--split", "all",
                 "--horizons", "0.4,0.8", "--report", "base.json"]) == EXIT_OK
    rep = json.loads((dataset / "base.json").read_text())
    assert {r["horizon_s"] for r in rep["rows"]} == {0.4, 0.8}
    out = tmp_path / "plots"
    assert main(["export-plot", "--out", str(out), "--report", str(dataset / "base.json")]) == EXIT_OK
    assert (out / "rge.png").is_file() and (out / "rge_h0.4s.csv").is_file()


def test_config_errors_exit_2(tmp_path, capsys):
    missing = tmp_path / "nowhere"
    assert main(["train", "--out", str(missing), "--data", "absent.jsonl"]) == EXIT_CONFIG
    assert not missing.exists()
    assert main(["verify", "--set", "train.bogus=1"]) == EXIT_CONFIG
    assert main(["verify", "--config", str(tmp_path / "none.toml")]) == EXIT_CONFIG
    assert main(["verify", "--only", "no_such_check"]) == EXIT_CONFIG
    assert main(["simulate", "--out", str(tmp_path / "o"), "--data", "/elsewhere/d.jsonl"]) == EXIT_CONFIG
    assert "config error" in capsys.readouterr().err


def test_verify_suite(capsys):
    assert len(check_names()) >= 25
    assert main(["verify"]) == EXIT_OK
    out = capsys.readouterr().out
    assert out.count("PASS") >= 25 and "FAIL" not in out


def test_verify_flags_corrupt_checkpoint(tmp_path, capsys):
    from sgcde.model import CdeModel, ModelConfig

    d = checkpoint.to_dict(CdeModel(ModelConfig(latent=4, hidden=4)))
    d["params"][next(iter(d["params"]))][0] = float("inf")
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(d))
    assert main(["verify", "--only", "hat_vee_inverse", "--ckpt", str(bad)]) == EXIT_VERIFY
    assert "FAIL" in capsys.readouterr().out


def test_env_seed(monkeypatch, tmp_path):
    monkeypatch.setenv("SGCDE_SEED", "5")
    monkeypatch.setenv("SGCDE_DATA__COUNT", "4")
    assert main(["simulate", "--out", str(tmp_path)]) == EXIT_OK
    echo = json.loads((tmp_path / "simulate_config.json").read_text())
    assert echo["seed"] == 5 and echo["data"]["count"] == 4 and echo["data"]["seed"] == 5


def test_io_error_exit_3(tmp_path):
    blocker = tmp_path / "f"
    blocker.write_text("")
    assert main(["simulate", "--out", str(blocker / "x"), "--count", "4"]) == 3
