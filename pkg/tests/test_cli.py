import json
import math
import subprocess
import sys

import pytest

from fce_ddpc.cli import main
from fce_ddpc.hankel import load_dataset


def _write(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


@pytest.fixture
def bench_cfg(tmp_path):
    return _write(tmp_path / "bench.json", {"plant": "benchmark", "N_data": 250, "seed": 1})


@pytest.fixture
def data_csv(tmp_path, bench_cfg):
    out = tmp_path / "data.csv"
    assert main(["simulate", "--config", bench_cfg, "--out", str(out)]) == 0
    return str(out)


def test_simulate(data_csv, capsys):
    ds = load_dataset(data_csv)
    assert ds.y_log.shape == (250, 1)
    lines = open(data_csv).read().splitlines()
    assert len(lines) == 251 and lines[0] == "m=1,p=1"


def test_simulate_prints_seed_and_snr(tmp_path, bench_cfg, capsys):
    main(["simulate", "--config", bench_cfg, "--out", str(tmp_path / "d.csv"), "--seed", "4"])
    out = capsys.readouterr().out
    assert "seed=4" in out and "SNR=" in out


def test_simulate_deterministic(tmp_path, bench_cfg, data_csv):
    again = tmp_path / "again.csv"
    main(["simulate", "--config", bench_cfg, "--out", str(again)])
    assert again.read_bytes() == open(data_csv, "rb").read()


def test_missing_config(tmp_path, capsys):
    code = main(["simulate", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path / "x")])
    assert code == 2
    assert "config not found" in capsys.readouterr().err


@pytest.mark.parametrize("bad", [{"N_data": 250, "colour": "red"}, {"N_data": 0},
                                 {"reference": {"kind": "sawtooth"}}])
def test_schema_rejects(tmp_path, bad):
    cfg = _write(tmp_path / "bad.json", bad)
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "x.csv")]) == 2


def test_invalid_json(tmp_path):
    p = tmp_path / "broken.json"
    p.write_text("{not json")
    assert main(["simulate", "--config", str(p), "--out", str(tmp_path / "x.csv")]) == 2


def test_fit(tmp_path, bench_cfg, data_csv):
    out = tmp_path / "model.json"
    assert main(["fit", "--config", bench_cfg, "--data", data_csv, "--out", str(out)]) == 0
    model = json.loads(out.read_text())
    assert model["rho"] >= 1 and model["sigma2_hat"] > 0


def test_control_mpc_noise_free(tmp_path, data_csv):
    cfg = _write(tmp_path / "ctl.json", {
        "scheme": "mpc_oracle", "sigma2": 0.0, "rho": 4,
        "excitation": {"pre_filter_variance": 0.0},
        "reference": {"kind": "constant", "amplitude": 0.0}})
    out = tmp_path / "ctl"
    assert main(["control", "--config", cfg, "--data", data_csv, "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["J_a"] < 1e-6 and summary["unstable"] is False
    assert len((out / "closed_loop.csv").read_text().splitlines()) == 501


def test_control_fce_components(tmp_path, data_csv):
    cfg = _write(tmp_path / "ctl.json", {"scheme": "fce", "seed": 3, "T_v": 500})
    out = tmp_path / "fce"
    assert main(["control", "--config", cfg, "--data", data_csv, "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert math.isfinite(summary["J_a"])
    comps = summary["fce_components"]
    assert len(comps) == 500
    assert all(c["r"] >= 0 for c in comps)


def test_control_explicit_params(tmp_path, data_csv):
    cfg = _write(tmp_path / "ctl.json", {"scheme": "gamma3", "params": {"beta2": 0, "beta3": "inf"},
                                         "T_v": 480, "reference": {"kind": "square_wave", "period": 40}})
    out = tmp_path / "g3"
    assert main(["control", "--config", cfg, "--data", data_csv, "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["params"]["beta3"] == "inf"


def test_bench_and_report(tmp_path, capsys):
    cfg = _write(tmp_path / "b.json", {"n_runs": 3, "schemes": [{"name": "mpc_oracle"},
                                                                 {"name": "thm3"}]})
    out = tmp_path / "bench"
    assert main(["bench", "--config", cfg, "--out", str(out), "--runs", "1"]) == 0
    assert sorted(p.name for p in out.iterdir()) == ["report.json", "samples.csv", "timing.csv"]
    report = json.loads((out / "report.json").read_text())
    assert report["config"]["n_runs"] == 1
    first = (out / "report.json").read_bytes()
    assert main(["bench", "--config", cfg, "--out", str(out), "--runs", "1"]) == 0
    assert (out / "report.json").read_bytes() == first
    capsys.readouterr()
    assert main(["report", str(out)]) == 0
    assert "thm3" in capsys.readouterr().out
    assert main(["report", str(tmp_path / "missing")]) == 2


def test_bad_scheme_combination(tmp_path):
    cfg = _write(tmp_path / "b.json", {"schemes": [{"name": "fce", "tuning": "online"}]})
    assert main(["bench", "--config", cfg, "--out", str(tmp_path / "o")]) == 2


def test_runtime_failure_exit_one(tmp_path, bench_cfg):
    bad = tmp_path / "bad.csv"
    bad.write_text("garbage\n")
    assert main(["fit", "--config", bench_cfg, "--data", str(bad), "--out", str(tmp_path / "m")]) == 1


def test_module_entry_point(tmp_path, bench_cfg):
    out = tmp_path / "d.csv"
    proc = subprocess.run([sys.executable, "-m", "fce_ddpc", "simulate", "--config", bench_cfg,
                           "--out", str(out)], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert out.exists()
