"""Configuration loading, pipeline orchestration, and output artifacts."""

import csv
import json
import os
import subprocess
import sys

import numpy as np
import pytest

from grflab import cli
from grflab.cli import (CSV_COLUMNS, ConfigError, PRESETS, load_config,
                        run_pipeline)


def write_config(tmp_path, name="cfg.json", **body):
    path = tmp_path / name
    path.write_text(json.dumps(body))
    return str(path)


def test_presets_build_valid_states():
    for name, builder in PRESETS.items():
        st = builder()
        st.validate()
        assert st.t == 0.0


def test_load_config_minimal(tmp_path):
    cfg = load_config(write_config(tmp_path, preset="flat-abelian"))
    assert cfg.preset == "flat-abelian"
    assert cfg.mode == "ungauged"


def test_load_config_rejects_unknown_and_bad_values(tmp_path):
    path = write_config(tmp_path, preset="nope", bogus=1, mode="weird",
                        t_end=-1.0)
    with pytest.raises(ConfigError) as err:
        load_config(path)
    msg = str(err.value)
    for needle in ("/bogus", "/preset", "/mode", "/t_end"):
        assert needle in msg


def test_load_config_rejects_non_nilpotent_algebra(tmp_path):
    c = np.zeros((3, 3, 3))
    for m, i, j in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
        c[m, i, j], c[m, j, i] = 1.0, -1.0
    path = write_config(tmp_path, preset="heisenberg-s1",
                        algebra={"k": 3, "c": c.tolist()})
    with pytest.raises(ConfigError, match="nilpotency"):
        load_config(path)


def test_load_config_rejects_non_closed_torsion(tmp_path):
    path = write_config(tmp_path, preset="inoue-like", h3_wave_amp=0.5)
    with pytest.raises(ConfigError, match="dH"):
        load_config(path)


def test_load_config_rejects_bad_json(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(str(path))


def test_flat_abelian_pipeline_clean(tmp_path):
    out = tmp_path / "out"
    cfg = load_config(write_config(
        tmp_path, preset="flat-abelian", mesh_n=16, t_end=0.01,
        report_stride=5, output_dir=str(out)))
    assert run_pipeline(cfg) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["status"] == "clean"
    assert manifest["soliton"]["steady_rigidity"]
    with open(out / "report.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0].keys()) == CSV_COLUMNS
    for row in rows:
        assert abs(float(row["F"])) < 1e-12
        assert float(row["mass_u"]) == pytest.approx(1.0, abs=1e-12)
        assert float(row["min_eig_G"]) == pytest.approx(1.0, abs=1e-12)


def test_pipeline_determinism(tmp_path):
    blobs = []
    for run in range(2):
        out = tmp_path / f"out{run}"
        cfg = load_config(write_config(
            tmp_path, preset="heisenberg-s1", mesh_n=16, t_end=0.005,
            report_stride=3, output_dir=str(out)))
        assert run_pipeline(cfg) == 0
        blobs.append((out / "report.csv").read_bytes())
    assert blobs[0] == blobs[1]


def test_abort_leaves_manifest(tmp_path):
    out = tmp_path / "out"
    cfg = load_config(write_config(
        tmp_path, preset="heisenberg-s1", mesh_n=16, t_end=10.0,
        fixed_dt=10.0, output_dir=str(out)))
    assert run_pipeline(cfg) == 1
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["status"] == "aborted"
    assert manifest["abort_reason"]
    assert manifest["stages"] == ["forward"]


def test_output_root_env(tmp_path, monkeypatch):
    monkeypatch.setenv("GRFLAB_OUTPUT_ROOT", str(tmp_path / "root"))
    cfg = load_config(write_config(
        tmp_path, preset="flat-abelian", mesh_n=16, t_end=0.005,
        report_stride=5, output_dir="rel-out"))
    assert run_pipeline(cfg) == 0
    assert (tmp_path / "root" / "rel-out" / "manifest.json").exists()


def test_report_subcommand(tmp_path, capsys):
    out = tmp_path / "out"
    cfg = load_config(write_config(
        tmp_path, preset="flat-abelian", mesh_n=16, t_end=0.005,
        report_stride=5, output_dir=str(out)))
    run_pipeline(cfg)
    assert cli.main(["report", str(out)]) == 0
    captured = capsys.readouterr()
    assert "preset: flat-abelian" in captured.out
    assert cli.main(["report", str(tmp_path / "missing")]) == 1


def test_run_subcommand_bad_config(tmp_path, capsys):
    path = write_config(tmp_path, preset="nope")
    assert cli.main(["run", path]) == 1


def test_verify_subcommand(capsys):
    assert cli.main(["verify", "--seed", "7", "--mesh", "32",
                     "--suite", "torsion"]) == 0
    captured = capsys.readouterr()
    assert "PASS" in captured.out


def test_console_entry_point():
    proc = subprocess.run(
        [sys.executable, "-m", "grflab.cli", "verify", "--seed", "3",
         "--mesh", "32", "--suite", "curvature"],
        capture_output=True, text=True)
    assert proc.returncode == 0
    assert "overall" in proc.stdout
