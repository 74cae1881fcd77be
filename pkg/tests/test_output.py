import json
import os

import numpy as np
import pytest

from pdwalk.basin import GridSpec, RegionRaster
from pdwalk.output import (
    RunManifest,
    atomic_write_bytes,
    config_digest,
    csv_bytes,
    export_raster,
    format_value,
    json_bytes,
    pgm_bytes,
    read_pgm,
    sha256_of,
    write_pgm,
)


def _raster(n_short=None):
    surv = np.array([[0, 1, 2], [3, 200, 300]], dtype=np.int32)
    return RegionRaster(
        GridSpec((0.1, 0.4), (-0.4, -0.2), 3, 2), surv, n_max=200 if n_short else 3,
        n_short=n_short, metadata={"gamma": 0.011},
    )


def test_floats_round_trip_through_text():
    for v in (0.1, 1 / 3, -2.5e-17, 0.21391825220151192):
        assert float(format_value(v)) == v
    assert format_value(np.float64(0.5)) == "0.5"
    assert format_value(True) == "1" and format_value(np.bool_(False)) == "0"
    assert format_value(np.int32(7)) == "7"


def test_csv_layout():
    data = csv_bytes(("a", "b"), [(1, 0.1), (2, "x")])
    assert data == b"a,b\n1,0.10000000000000001\n2,x\n"
    assert b"\r" not in data


def test_pgm_round_trip(tmp_path):
    img = np.arange(12, dtype=np.uint8).reshape(3, 4)
    path = write_pgm(tmp_path / "a.pgm", img)
    assert path.read_bytes().startswith(b"P5\n4 3\n255\n")
    np.testing.assert_array_equal(read_pgm(path), img)


def test_pgm_reader_rejects_other_formats(tmp_path):
    (tmp_path / "a.pgm").write_bytes(b"P2\n1 1\n255\n0\n")
    with pytest.raises(ValueError):
        read_pgm(tmp_path / "a.pgm")


def test_atomic_write_leaves_no_temporaries(tmp_path):
    target = tmp_path / "out.bin"
    target.write_bytes(b"old")
    atomic_write_bytes(target, b"new")
    assert target.read_bytes() == b"new"
    assert os.listdir(tmp_path) == ["out.bin"]


def test_atomic_write_into_missing_directory_fails(tmp_path):
    with pytest.raises(OSError):
        atomic_write_bytes(tmp_path / "nope" / "x", b"")


def test_json_is_canonical():
    a = json_bytes({"b": 1, "a": np.float64(0.5), "c": np.arange(2)})
    b = json_bytes({"c": [0, 1], "a": 0.5, "b": 1})
    assert a == b
    assert config_digest({"x": 1}) == config_digest({"x": 1})
    assert config_digest({"x": 1}) != config_digest({"x": 2})


def test_export_raster_layout(tmp_path):
    paths = export_raster(_raster(), tmp_path / "r")
    assert [p.name for p in paths] == ["r.csv", "r.pgm", "r.json"]
    lines = paths[0].read_text().splitlines()
    assert lines[0] == "theta1,dtheta1,survival,in_D,in_S1D,in_S2D,in_B"
    assert len(lines) == 7
    # lowest dtheta1 row first, theta1 fastest
    first = lines[1].split(",")
    assert (float(first[0]), float(first[1]), first[2]) == (pytest.approx(0.15), pytest.approx(-0.35), "0")
    assert lines[4].split(",")[2:6] == ["3", "1", "1", "1"]
    img = read_pgm(paths[1])
    np.testing.assert_array_equal(img, [[3, 200, 255], [0, 1, 2]])
    meta = json.loads(paths[2].read_text())
    assert meta["valid_planes"] == ["in_D", "in_S1D", "in_S2D"]
    assert meta["gamma"] == 0.011


def test_export_basin_marks_basin_column(tmp_path):
    paths = export_raster(_raster(n_short=50), tmp_path / "b")
    rows = [l.split(",") for l in paths[0].read_text().splitlines()[1:]]
    assert [r[-1] for r in rows] == ["0", "0", "0", "0", "1", "1"]
    assert "in_B" in json.loads(paths[2].read_text())["valid_planes"]


def test_manifest_lists_digests(tmp_path):
    paths = export_raster(_raster(), tmp_path / "r")
    m = RunManifest("raster", {"gamma": 0.011}, workers=1)
    for p in paths:
        m.add_output(p)
    out = m.write(tmp_path / "r.manifest.json")
    data = json.loads(out.read_text())
    assert data["config_digest"] == config_digest({"gamma": 0.011})
    for entry, p in zip(data["outputs"], paths):
        assert entry["sha256"] == sha256_of(p)
        assert entry["bytes"] == p.stat().st_size
