"""Deterministic file outputs: CSV, PGM, JSON, and the run manifest.

Every file is written to a temporary sibling first and renamed into place,
so readers never see a half-written output.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, List, Sequence

import numpy as np

from pdwalk import __version__


def atomic_write_bytes(path, data: bytes) -> Path:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def format_value(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17g" % float(v)
    return str(v)


def csv_bytes(header: Sequence[str], rows: Iterable[Sequence]) -> bytes:
    lines = [",".join(header)]
    lines.extend(",".join(format_value(v) for v in row) for row in rows)
    return ("\n".join(lines) + "\n").encode("utf-8")


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    return atomic_write_bytes(path, csv_bytes(header, rows))


def pgm_bytes(image: np.ndarray) -> bytes:
    """Binary 8-bit PGM; row 0 of ``image`` is the top of the picture."""
    img = np.ascontiguousarray(image, dtype=np.uint8)
    h, w = img.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + img.tobytes()


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise ValueError("only 8-bit PGM is supported")
    return np.frombuffer(parts[4], dtype=np.uint8, count=w * h).reshape(h, w)


def write_pgm(path, image: np.ndarray) -> Path:
    return atomic_write_bytes(path, pgm_bytes(image))


def json_bytes(obj) -> bytes:
    return (json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n").encode("utf-8")


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"cannot serialise {type(o).__name__}")


def write_json(path, obj) -> Path:
    return atomic_write_bytes(path, json_bytes(obj))


def sha256_of(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def config_digest(params: dict) -> str:
    return hashlib.sha256(json_bytes(params)).hexdigest()


# --------------------------------------------------------------------------
# raster export


RASTER_COLUMNS = ("theta1", "dtheta1", "survival", "in_D", "in_S1D", "in_S2D", "in_B")


def raster_rows(raster):
    """Rows in cell order: ``dtheta1`` ascending outer, ``theta1`` ascending inner.

    Inverse-image columns beyond ``n_max`` and the basin column of a plain
    raster are written as 0; the sidecar records which planes are valid.
    """
    xs, ys = raster.spec.centers()
    surv = raster.survival
    in_b = raster.in_B() if raster.n_short is not None else np.zeros_like(surv, dtype=bool)
    for j, y in enumerate(ys):
        for i, x in enumerate(xs):
            s = int(surv[j, i])
            yield (x, y, s, s >= 1, s >= 2, s >= 3, bool(in_b[j, i]))


def survival_image(raster) -> np.ndarray:
    """Survival counts clamped to 0..255, largest ``dtheta1`` on the top row."""
    return np.clip(raster.survival, 0, 255).astype(np.uint8)[::-1]


def export_raster(raster, stem) -> List[Path]:
    """Write ``stem.csv``, ``stem.pgm`` and ``stem.json``; returns the paths."""
    stem = Path(stem)
    csv_path = write_csv(stem.with_suffix(".csv"), RASTER_COLUMNS, raster_rows(raster))
    pgm_path = write_pgm(stem.with_suffix(".pgm"), survival_image(raster))
    meta = dict(raster.metadata)
    meta["columns"] = list(RASTER_COLUMNS)
    meta["valid_planes"] = [c for c, n in (("in_D", 1), ("in_S1D", 2), ("in_S2D", 3)) if raster.n_max >= n]
    if raster.n_short is not None:
        meta["valid_planes"].append("in_B")
    meta["pgm"] = {"clamp": 255, "top_row": "largest dtheta1"}
    json_path = write_json(stem.with_suffix(".json"), meta)
    return [csv_path, pgm_path, json_path]


# --------------------------------------------------------------------------
# run manifest


@dataclass
class RunManifest:
    command: str
    parameters: dict
    workers: int
    wall_time: float = 0.0
    toolkit_version: str = __version__
    config_digest: str = ""
    outputs: List[dict] = field(default_factory=list)

    def add_output(self, path) -> None:
        path = Path(path)
        self.outputs.append({"path": path.name, "sha256": sha256_of(path), "bytes": path.stat().st_size})

    def write(self, path) -> Path:
        if not self.config_digest:
            self.config_digest = config_digest(self.parameters)
        return write_json(path, asdict(self))
