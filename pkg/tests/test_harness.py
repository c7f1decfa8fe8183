import json
import os

import numpy as np
import pytest

from egloce.cli import main
from egloce.config import ConfigError, default_config_dict, parse_config
from egloce.harness import (
    WORKERS_ENV,
    format_metrics_row,
    metrics_header,
    resolve_workers,
    run,
    sweep,
)


def _small_dict(chains=200, **guidance):
    d = default_config_dict()
    d["run"]["chains"] = chains
    d["run"]["master_seed"] = 99
    d["guidance"].update(guidance)
    return d


@pytest.fixture()
def small_cfg():
    return parse_config(_small_dict())


def test_resolve_workers_env_wins(monkeypatch):
    monkeypatch.delenv(WORKERS_ENV, raising=False)
    assert resolve_workers(None) == 1
    assert resolve_workers(3) == 3
    monkeypatch.setenv(WORKERS_ENV, "2")
    assert resolve_workers(8) == 2
    monkeypatch.setenv(WORKERS_ENV, "zero")
    with pytest.raises(ConfigError):
        resolve_workers(1)
    monkeypatch.setenv(WORKERS_ENV, "0")
    with pytest.raises(ConfigError):
        resolve_workers(1)


def test_run_writes_deterministic_artifacts(tmp_path, small_cfg):
    out1 = tmp_path / "a"
    out2 = tmp_path / "b"
    rows1 = run(small_cfg, str(out1), workers=1)
    rows2 = run(small_cfg, str(out2), workers=4)
    assert len(rows1) == 1
    for name in ("metrics.csv", "samples_run.csv"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()
    # Timings are wall-clock and deliberately live outside the stable set.
    assert (out1 / "timings.csv").exists()
    header = (out1 / "metrics.csv").read_text().splitlines()[0]
    assert header == metrics_header()
    assert header.split(",")[:4] == ["config_hash", "K", "lambda_rep", "lambda_ret"]


def test_metrics_row_formatting(small_cfg, tmp_path):
    rows = run(small_cfg, str(tmp_path / "fmt"), workers=2)
    line = format_metrics_row(rows[0])
    fields = line.split(",")
    assert fields[0] == small_cfg.config_hash()
    assert fields[1] == "3"
    assert float(fields[2]) == 0.2
    assert fields[6] == "stale-epsilon"
    assert int(fields[7]) == 200


def test_run_rejects_sweep_config(tmp_path):
    d = _small_dict()
    d["sweep"] = {"axis": "K", "values": [1, 3]}
    cfg = parse_config(d)
    with pytest.raises(ConfigError):
        run(cfg, str(tmp_path / "x"))
    with pytest.raises(ConfigError):
        sweep(parse_config(_small_dict()), str(tmp_path / "y"))


def test_sweep_rows_and_files(tmp_path):
    d = _small_dict(chains=150)
    d["sweep"] = {"axis": "K", "values": [0, 3]}
    cfg = parse_config(d)
    out = tmp_path / "sweepk"
    rows = sweep(cfg, str(out), workers=2)
    assert [r.tag for r in rows] == ["K0", "K3"]
    text = (out / "metrics.csv").read_text().splitlines()
    assert len(text) == 3
    assert {p.name for p in out.glob("samples_*.csv")} == {
        "samples_K0.csv",
        "samples_K3.csv",
    }
    # K=0 leaves guidance off, so erasure stays near the 0.25 baseline.
    assert rows[0].report.erased_mass > 0.15
    assert rows[1].report.erased_mass < rows[0].report.erased_mass


def test_samples_csv_shape(tmp_path, small_cfg):
    out = tmp_path / "s"
    run(small_cfg, str(out), workers=1)
    lines = (out / "samples_run.csv").read_text().splitlines()
    assert lines[0] == "chain_index,x0,x1,assigned_component,is_unsafe"
    assert len(lines) == 1 + small_cfg.chains
    first = lines[1].split(",")
    assert first[0] == "0" and first[3] in "0123" and first[4] in "01"


def test_trajectory_and_svg_artifacts(tmp_path):
    d = _small_dict(chains=40)
    d["sampler"]["capture_trajectory"] = True
    d["output"]["svg"] = True
    cfg = parse_config(d)
    out = tmp_path / "extras"
    run(cfg, str(out), workers=1)
    traj = (out / "trajectory_run.csv").read_text().splitlines()
    assert traj[0].startswith("chain_index,step,t,zt0,zt1,z00,z01")
    # 32-chain cap keeps trajectory output bounded: min(40, 32) * 50 rows.
    assert len(traj) == 1 + 32 * 50
    assert (out / "scatter_run.svg").read_text().startswith("<svg")


def _write_cfg(tmp_path, data):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(data))
    return str(path)


def test_cli_run_and_exit_codes(tmp_path, capsys):
    cfg_path = _write_cfg(tmp_path, _small_dict(chains=120))
    out = str(tmp_path / "out")
    assert main(["run", cfg_path, "--out", out, "--workers", "2"]) == 0
    captured = capsys.readouterr()
    assert "erased=" in captured.out
    assert os.path.exists(os.path.join(out, "metrics.csv"))


def test_cli_seed_override_changes_hash(tmp_path):
    cfg_path = _write_cfg(tmp_path, _small_dict(chains=60))
    out1, out2 = str(tmp_path / "o1"), str(tmp_path / "o2")
    assert main(["run", cfg_path, "--out", out1]) == 0
    assert main(["run", cfg_path, "--out", out2, "--seed", "123"]) == 0
    h1 = open(os.path.join(out1, "metrics.csv")).readlines()[1].split(",")[0]
    h2 = open(os.path.join(out2, "metrics.csv")).readlines()[1].split(",")[0]
    assert h1 != h2


def test_cli_config_error_is_exit_2(tmp_path, capsys):
    bad = _small_dict()
    bad["guidance"]["window"] = [20, 60]
    cfg_path = _write_cfg(tmp_path, bad)
    assert main(["run", cfg_path, "--out", str(tmp_path / "x")]) == 2
    assert "configuration error" in capsys.readouterr().err
    assert main(["run", str(tmp_path / "missing.json")]) == 2
    assert main(["sweep", cfg_path.replace("cfg", "nope")]) == 2


def test_cli_sweep_on_plain_config_is_exit_2(tmp_path):
    cfg_path = _write_cfg(tmp_path, _small_dict())
    assert main(["sweep", cfg_path, "--out", str(tmp_path / "x")]) == 2


def test_cli_validate_passes(capsys):
    assert main(["validate"]) == 0
    out = capsys.readouterr().out
    assert "checks passed" in out
    assert "[FAIL]" not in out


def test_cli_scatter_from_samples(tmp_path, capsys):
    cfg_path = _write_cfg(tmp_path, _small_dict(chains=50))
    out = str(tmp_path / "r")
    assert main(["run", cfg_path, "--out", out]) == 0
    samples = os.path.join(out, "samples_run.csv")
    assert main(["scatter", samples, cfg_path, "--out", out]) == 0
    svg_path = os.path.join(out, "scatter.svg")
    assert open(svg_path).read().startswith("<svg")
    world_only = tmp_path / "world.json"
    world_only.write_text(json.dumps({"world": _small_dict()["world"]}))
    assert main(["scatter", samples, str(world_only), "--out", out]) == 0


def test_cli_runtime_error_is_exit_3(tmp_path, capsys, monkeypatch):
    cfg_path = _write_cfg(tmp_path, _small_dict(chains=10))

    def boom(*a, **k):
        raise RuntimeError("synthetic failure")

    monkeypatch.setattr("egloce.cli.run_experiment", boom)
    assert main(["run", cfg_path, "--out", str(tmp_path / "x")]) == 3
    assert "runtime failure" in capsys.readouterr().err
