import json
import shutil
import subprocess
import sys

import pytest

from fdavp import cli
from fdavp.simulate import DegenerateCovarianceError

SIM = {
    "D": 1, "N": 30, "M": 8, "seed": 4,
    "mean": {"kind": "trig", "coefficients": [{"k": [1], "value": 1.0}, {"k": [2], "value": 0.5}]},
    "cov": {"kind": "exponential", "scale": 0.2},
    "noise": {"intercept": 0.3},
}


def _write(path, obj):
    path.write_text(json.dumps(obj, indent=2))
    return str(path)


@pytest.fixture
def dataset(tmp_path):
    cfg = _write(tmp_path / "sim.json", {"simulate": SIM})
    out = tmp_path / "data.json"
    assert cli.main(["simulate", "--config", cfg, "--out", str(out)]) == 0
    return out


def test_simulate_same_seed_is_byte_identical(tmp_path):
    cfg = _write(tmp_path / "c.json", {"simulate": SIM})
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert cli.main(["simulate", "--config", cfg, "--out", str(a)]) == 0
    assert cli.main(["simulate", "--config", cfg, "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    c = tmp_path / "c_out.json"
    assert cli.main(["simulate", "--config", cfg, "--out", str(c), "--seed", "5"]) == 0
    assert c.read_bytes() != a.read_bytes()


def test_simulate_csv_and_stamp(tmp_path):
    cfg = _write(tmp_path / "c.json", {"simulate": {**SIM, "csv": True}})
    out = tmp_path / "d.json"
    assert cli.main(["simulate", "--config", cfg, "--out", str(out)]) == 0
    assert (tmp_path / "d.csv").exists()
    meta = json.loads(out.read_text())["meta"]
    assert meta["seed"] == 4 and "tool_version" in meta and meta["config"]["N"] == 30


def test_estimate_and_risk(tmp_path, dataset):
    cfg = _write(tmp_path / "e.json", {"estimate": {"L": 3}, "dataset": str(dataset)})
    out = tmp_path / "model.json"
    assert cli.main(["estimate", "--config", cfg, "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert doc["config"]["L"] == 3
    risk = json.loads((tmp_path / "model.risk.json").read_text())
    assert risk["L"] == 3 and risk["l2_error"] >= 0


def test_estimate_optimal_level(tmp_path, dataset):
    cfg = _write(tmp_path / "e.json", {"estimate": {"optimal": {"K1": 0.5}}})
    out = tmp_path / "model.json"
    assert cli.main(["estimate", "--config", cfg, "--out", str(out), "--data", str(dataset)]) == 0
    assert json.loads((tmp_path / "model.risk.json").read_text())["L"] >= 1


@pytest.mark.parametrize("block", [
    {"method": "gaussian", "n_draws": 300, "grid": 64},
    {"method": "gaussian", "n_draws": 300, "grid": 64, "sigma_mode": "oracle", "K1": 0.5},
    {"method": "gaussian", "n_draws": 300, "grid": 64, "centering": "mean"},
    {"method": "subsampling", "grid": 64, "N_s": 20, "K1": 0.5},
])
def test_infer_variants(tmp_path, dataset, block):
    cfg = _write(tmp_path / "i.json", {"infer": block, "dataset": str(dataset)})
    out = tmp_path / "band.csv"
    assert cli.main(["infer", "--config", cfg, "--out", str(out)]) == 0
    assert out.exists() and (tmp_path / "band.json").exists()
    side = json.loads((tmp_path / "band.json").read_text())
    assert side["seed"] == 0


def test_infer_with_model(tmp_path, dataset):
    e = _write(tmp_path / "e.json", {"estimate": {"L": 2}})
    model = tmp_path / "m.json"
    assert cli.main(["estimate", "--config", e, "--out", str(model), "--data", str(dataset)]) == 0
    i = _write(tmp_path / "i.json", {"infer": {"n_draws": 200, "grid": 32}, "model": str(model)})
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for out in (a, b):
        assert cli.main(["infer", "--config", i, "--out", str(out), "--data", str(dataset)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_regularity_report(tmp_path):
    sim = _write(tmp_path / "s.json", {"simulate": {"D": 1, "N": 60, "M": 40, "mean": {"kind": "weierstrass", "alpha": 0.5}}})
    data = tmp_path / "d.json"
    assert cli.main(["simulate", "--config", sim, "--out", str(data)]) == 0
    cfg = _write(tmp_path / "r.json", {"regularity": {}, "dataset": str(data)})
    out = tmp_path / "reg.json"
    assert cli.main(["regularity", "--config", cfg, "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert doc["config"]["tau"] == 0.95 and doc["config"]["tau_prime"] == 0.7


def test_bench_and_threads_env(tmp_path, monkeypatch):
    cfg = _write(tmp_path / "b.json", {"bench": {"experiment": "integration", "replications": 2, "params": {"n": 20}}})
    seen = {}
    real = cli.run_bench

    def spy(block, out, threads=1):
        seen["threads"] = threads
        return real(block, out, threads=1)

    monkeypatch.setattr(cli, "run_bench", spy)
    monkeypatch.setenv("FDAVP_THREADS", "3")
    assert cli.main(["bench", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    assert seen["threads"] == 3
    assert cli.main(["bench", "--config", cfg, "--out", str(tmp_path / "o"), "--threads", "2"]) == 0
    assert seen["threads"] == 2
    assert (tmp_path / "o" / "summary.json").exists()


def test_bench_without_block_is_config_error(tmp_path):
    cfg = _write(tmp_path / "b.json", {})
    assert cli.main(["bench", "--config", cfg, "--out", str(tmp_path / "o")]) == 2


def test_schema_error_reports_file_line_path(tmp_path, capsys):
    text = '{\n  "simulate": {\n    "D": 1,\n    "N": -3,\n    "M": 5\n  }\n}\n'
    cfg = tmp_path / "bad.json"
    cfg.write_text(text)
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "x.json")]) == 2
    err = capsys.readouterr().err
    assert f"{cfg}:4: simulate/N:" in err


def test_unknown_key_reports_its_line(tmp_path, capsys):
    cfg = tmp_path / "bad.json"
    cfg.write_text('{\n  "infer": {\n    "level": 0.9,\n    "bogus": 1\n  }\n}\n')
    assert cli.main(["infer", "--config", str(cfg), "--out", str(tmp_path / "x.csv")]) == 2
    assert f"{cfg}:4: infer/bogus:" in capsys.readouterr().err


def test_invalid_json_reports_line(tmp_path, capsys):
    cfg = tmp_path / "bad.json"
    cfg.write_text('{\n  "simulate": {\n    "D": 1,,\n  }\n}\n')
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "x.json")]) == 2
    assert f"{cfg}:3: invalid JSON" in capsys.readouterr().err


def test_missing_dataset_is_config_error(tmp_path):
    cfg = _write(tmp_path / "e.json", {"estimate": {}})
    assert cli.main(["estimate", "--config", cfg, "--out", str(tmp_path / "m.json")]) == 2


def test_io_errors(tmp_path):
    assert cli.main(["simulate", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path / "x")]) == 4
    cfg = _write(tmp_path / "c.json", {"simulate": SIM})
    assert cli.main(["simulate", "--config", cfg, "--out", str(tmp_path / "no" / "dir" / "x.json")]) == 4


def test_numerical_failure_exit_code(tmp_path, monkeypatch):
    def boom(block):
        raise DegenerateCovarianceError("not positive definite")

    monkeypatch.setattr(cli, "simulate_from_config", boom)
    cfg = _write(tmp_path / "c.json", {"simulate": SIM})
    assert cli.main(["simulate", "--config", cfg, "--out", str(tmp_path / "x.json")]) == 3


def test_console_script(tmp_path):
    exe = shutil.which("fdavp")
    cmd = [exe] if exe else [sys.executable, "-m", "fdavp.cli"]
    cfg = _write(tmp_path / "c.json", {"simulate": SIM})
    res = subprocess.run(cmd + ["simulate", "--config", cfg, "--out", str(tmp_path / "x.json")], capture_output=True)
    assert res.returncode == 0
    res = subprocess.run(cmd + ["--version", "simulate"], capture_output=True, text=True)
    assert res.returncode == 0 and "fdavp" in res.stdout
