import json
import os
import subprocess
import sys

import pytest

from pdwalk.cli import EXIT_CANTCREAT, EXIT_DATA, EXIT_FELL, EXIT_OK, EXIT_USAGE, main
from pdwalk.output import sha256_of

SMALL = ["--gamma", "0.011", "--theta1", "0.15,0.35", "--dtheta1", "-0.35,-0.15", "--nx", "16", "--ny", "12"]


def _raster(tmp_path, name, *extra):
    stem = tmp_path / name
    assert main(["raster", *SMALL, "--n-max", "2", "--out", str(stem), *extra]) == EXIT_OK
    return [stem.with_suffix(s).read_bytes() for s in (".csv", ".pgm", ".json")]


def test_step_survives_near_the_gait(capsys):
    assert main(["step", "--gamma", "0.011", "--q", "0.22,-0.22", "--n", "20"]) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "step,theta1,dtheta1,duration"
    assert len(lines) == 22


def test_step_reports_a_fall(capsys):
    assert main(["step", "--gamma", "0.011", "--q", "0.9,-0.01", "--n", "5"]) == EXIT_FELL
    assert "fell after 0 steps" in capsys.readouterr().err


def test_step_writes_csv_and_manifest(tmp_path):
    out = tmp_path / "orbit.csv"
    assert main(["step", "--gamma", "0.011", "--q", "0.22,-0.22", "--n", "3", "--out", str(out)]) == EXIT_OK
    manifest = json.loads((tmp_path / "orbit.manifest.json").read_text())
    assert manifest["command"] == "step"
    assert manifest["outputs"][0]["sha256"] == sha256_of(out)


@pytest.mark.parametrize(
    "argv",
    [
        ["step", "--gamma", "-1", "--q", "0.2,-0.2"],
        ["step", "--gamma", "0.011", "--q", "-0.2,-0.2"],
        ["raster", *SMALL[:2], "--nx", "5000", "--out", "x"],
        ["linearized", "--samples", "1", "--out", "x.csv"],
        ["raster", *SMALL, "--workers", "0", "--out", "x"],
    ],
)
def test_invalid_parameters_exit_65(tmp_path, argv):
    os.chdir(tmp_path)
    assert main(argv) == EXIT_DATA


@pytest.mark.parametrize("argv", [[], ["step"], ["step", "--gamma", "0.011", "--q", "abc"], ["fly"]])
def test_usage_errors_exit_64(argv):
    assert main(argv) == EXIT_USAGE


def test_unwritable_output_exits_73(tmp_path):
    assert main(["wcs", "--gamma", "0.011", "--out", str(tmp_path / "missing" / "w.csv")]) == EXIT_CANTCREAT


def test_missing_preimage_input_exits_65(tmp_path):
    argv = ["preimage", "--input", str(tmp_path / "none.csv"), "--out", str(tmp_path / "p.csv")]
    assert main(argv) == EXIT_DATA


def test_config_supplies_defaults_and_flags_win(tmp_path):
    cfg = tmp_path / "run.ini"
    cfg.write_text("[DEFAULT]\ngamma = 0.009\n\n[wcs]\nsamples = 7\n")
    out = tmp_path / "w.csv"
    assert main(["--config", str(cfg), "wcs", "--out", str(out)]) == EXIT_OK
    params = json.loads((tmp_path / "w.manifest.json").read_text())["parameters"]
    assert params["gamma"] == 0.009 and params["samples"] == 7
    assert len(out.read_text().splitlines()) == 8
    assert main(["--config", str(cfg), "wcs", "--samples", "4", "--out", str(out)]) == EXIT_OK
    assert len(out.read_text().splitlines()) == 5


def test_config_rejects_unknown_keys(tmp_path):
    cfg = tmp_path / "run.ini"
    cfg.write_text("[wcs]\ncolour = red\n")
    assert main(["--config", str(cfg), "wcs", "--gamma", "0.011", "--out", str(tmp_path / "w.csv")]) == EXIT_USAGE


def test_unreadable_config_is_a_usage_error(tmp_path):
    assert main(["--config", str(tmp_path / "none.ini"), "wcs", "--gamma", "0.011", "--out", "w.csv"]) == EXIT_USAGE


def test_preimage_of_raster_domain(tmp_path):
    _raster(tmp_path, "r")
    out = tmp_path / "pre.csv"
    argv = ["preimage", "--input", str(tmp_path / "r.csv"), "--only", "in_D", "--out", str(out)]
    assert main(argv) == EXIT_OK
    rows = [l.split(",") for l in out.read_text().splitlines()[1:]]
    assert rows and all(float(r[2]) == -float(r[0]) for r in rows)


def test_orbit_find_prints_multipliers(tmp_path, capsys):
    argv = ["orbit-find", "--gamma", "0.011", "--out", str(tmp_path / "fp.csv")]
    assert main(argv) == EXIT_OK
    assert capsys.readouterr().out.count("multiplier") == 2
    results = json.loads((tmp_path / "fp.manifest.json").read_text())["parameters"]["results"]
    assert results["stable"] and results["residual"] < 1e-10


def test_raster_reruns_are_byte_identical(tmp_path):
    assert _raster(tmp_path, "a") == _raster(tmp_path, "b")


def test_raster_is_independent_of_worker_count(tmp_path, monkeypatch):
    serial = _raster(tmp_path, "serial", "--workers", "1")
    monkeypatch.setenv("PDWALK_WORKERS", "3")
    pooled = _raster(tmp_path, "pooled")
    assert serial == pooled
    manifest = json.loads((tmp_path / "pooled.manifest.json").read_text())
    assert manifest["workers"] == 3


def test_console_script_entry_point():
    res = subprocess.run([sys.executable, "-m", "pdwalk.cli", "--version"], capture_output=True, text=True)
    assert res.returncode == 0
    assert res.stdout.strip().endswith("0.1.0")
