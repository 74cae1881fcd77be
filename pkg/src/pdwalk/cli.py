"""Command-line front end.

Exit codes: 0 success, 2 the walker fell, 64 usage error, 65 invalid
parameter values, 73 output path not writable.

Every option may also come from a ``--config`` file in key=value form.
Keys in ``[DEFAULT]`` apply to all commands and keys in a section named
after the command apply to that command; explicit flags win.
"""

from __future__ import annotations

import argparse
import configparser
import logging
import math
import re
import sys
import time
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from pdwalk import __version__
from pdwalk.integrator import IntegratorConfig
from pdwalk.model import ParameterError, WalkerParams
from pdwalk.parallel import resolve_workers
from pdwalk.output import RunManifest, export_raster, write_csv

EXIT_OK = 0
EXIT_FELL = 2
EXIT_USAGE = 64
EXIT_DATA = 65
EXIT_CANTCREAT = 73

MAX_RESOLUTION = 4096

log = logging.getLogger("pdwalk")


class UsageError(Exception):
    pass


def _pair(text: str):
    try:
        a, b = (float(v) for v in str(text).split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected two comma-separated numbers, got {text!r}")
    return a, b


def _floats(text: str):
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


_NUMBER = r"-?(\d+\.?\d*|\.\d+)([eE][-+]?\d+)?"


class _Parser(argparse.ArgumentParser):
    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        # let "-0.35,-0.15" through as a value rather than an unknown flag
        self._negative_number_matcher = re.compile(rf"^-(\d+\.?\d*|\.\d+)([eE][-+]?\d+)?(,{_NUMBER})*$")

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# --------------------------------------------------------------------------
# shared option groups


def _add_integrator(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("integrator")
    d = IntegratorConfig()
    g.add_argument("--rtol", type=float, default=d.rel_tol)
    g.add_argument("--atol", type=float, default=d.abs_tol)
    g.add_argument("--max-step", type=float, default=d.max_step)
    g.add_argument("--t-max", type=float, default=d.t_max, help="time budget per swing")


def _add_out(p: argparse.ArgumentParser, required: bool = True, help: str = "output path") -> None:
    p.add_argument("--out", type=Path, required=required, help=help)


def _add_workers(p: argparse.ArgumentParser) -> None:
    p.add_argument("--workers", type=int, default=None, help="worker processes (default: $PDWALK_WORKERS or 1)")


def _add_window(p: argparse.ArgumentParser) -> None:
    from pdwalk.basin import GridSpec

    d = GridSpec()
    p.add_argument("--theta1", type=_pair, default=",".join(map(str, d.theta1)), help="lo,hi")
    p.add_argument("--dtheta1", type=_pair, default=",".join(map(str, d.dtheta1)), help="lo,hi")
    p.add_argument("--nx", type=int, default=d.nx)
    p.add_argument("--ny", type=int, default=d.ny)
    p.add_argument("--supersample", type=int, default=1, help="samples per cell axis")


def _cfg(args) -> IntegratorConfig:
    return IntegratorConfig(rel_tol=args.rtol, abs_tol=args.atol, max_step=args.max_step, t_max=args.t_max)


def _grid(args):
    from pdwalk.basin import GridSpec

    if args.nx > MAX_RESOLUTION or args.ny > MAX_RESOLUTION:
        raise ValueError(f"resolution is limited to {MAX_RESOLUTION} cells per axis")
    if args.supersample < 1:
        raise ValueError("supersample must be >= 1")
    return GridSpec(tuple(args.theta1), tuple(args.dtheta1), args.nx, args.ny)


def _params(args) -> Dict[str, object]:
    out = {}
    for k, v in sorted(vars(args).items()):
        if k in ("func", "config", "verbose"):
            continue
        if isinstance(v, Path):
            v = str(v)
        elif isinstance(v, tuple):
            v = list(v)
        out[k] = v
    return out


def _manifest_path(out: Path) -> Path:
    return out.with_name(out.name + ".manifest.json") if out.suffix == "" else out.with_suffix(".manifest.json")


def _finish(args, command: str, outputs: Sequence[Path], started: float, extra: Optional[dict] = None) -> None:
    m = RunManifest(command, _params(args), resolve_workers(getattr(args, "workers", None)))
    if extra:
        m.parameters["results"] = extra
    for path in outputs:
        m.add_output(path)
    m.wall_time = time.perf_counter() - started
    m.write(_manifest_path(Path(args.out)))


def _check_writable(path: Path) -> None:
    parent = path.parent if str(path.parent) else Path(".")
    if not parent.is_dir():
        raise PermissionError(f"output directory {parent} does not exist")


# --------------------------------------------------------------------------
# commands


def cmd_step(args) -> int:
    from pdwalk.hybrid import iterate

    p = WalkerParams(args.gamma)
    orbit = iterate(args.q, p, _cfg(args), args.n)
    rows = [(0, orbit.points[0][0], orbit.points[0][1], "")]
    for i, (q, dur) in enumerate(zip(orbit.points[1:], orbit.durations), start=1):
        rows.append((i, q[0], q[1], dur))
    header = ("step", "theta1", "dtheta1", "duration")
    if args.out is not None:
        started = time.perf_counter()
        _check_writable(args.out)
        write_csv(args.out, header, rows)
        _finish(args, "step", [args.out], started, {"steps": len(orbit.durations)})
    else:
        from pdwalk.output import csv_bytes

        sys.stdout.write(csv_bytes(header, rows).decode("utf-8"))
    if orbit.fall_reason is not None:
        print(f"fell after {len(orbit.durations)} steps: {orbit.fall_reason.value}", file=sys.stderr)
        return EXIT_FELL
    return EXIT_OK


def cmd_raster(args) -> int:
    from pdwalk.basin import compute_raster

    started = time.perf_counter()
    _check_writable(args.out)
    p = WalkerParams(args.gamma)
    spec = _grid(args)
    if args.n_max < 1:
        raise ValueError("n-max must be >= 1")
    r = compute_raster(p, spec, args.n_max, _cfg(args), args.workers, args.supersample)
    paths = export_raster(r, args.out)
    _finish(args, "raster", paths, started, {"area_fraction_D": r.area_fraction(r.in_D())})
    return EXIT_OK


def cmd_basin(args) -> int:
    from pdwalk.basin import compute_basin

    started = time.perf_counter()
    _check_writable(args.out)
    p = WalkerParams(args.gamma)
    spec = _grid(args)
    r = compute_basin(p, spec, _cfg(args), args.n_short, args.n_long, args.workers, args.supersample)
    paths = export_raster(r, args.out)
    _finish(
        args, "basin", paths, started,
        {"area_fraction_D": r.area_fraction(r.in_D()), "area_fraction_B": r.area_fraction(r.in_B())},
    )
    return EXIT_OK


def _gamma_grid(args) -> List[float]:
    if args.gammas:
        return list(args.gammas)
    if args.gamma_step <= 0:
        raise ValueError("gamma-step must be positive")
    n = int(math.floor((args.gamma_stop - args.gamma_start) / args.gamma_step + 1e-9)) + 1
    return [round(args.gamma_start + i * args.gamma_step, 12) for i in range(n)]


def cmd_scan(args) -> int:
    from pdwalk.fixed_points import scan_bifurcation, scan_metadata

    started = time.perf_counter()
    _check_writable(args.out)
    gammas = _gamma_grid(args)
    for g in gammas:
        WalkerParams(g)
    records = scan_bifurcation(gammas, _cfg(args), transient=args.transient, window=args.window)
    summary = [
        (r.gamma, r.label, r.period if r.period is not None else "",
         r.largest_multiplier_modulus if r.largest_multiplier_modulus is not None else "", r.survived)
        for r in records
    ]
    out = args.out.with_suffix(".csv")
    write_csv(out, ("gamma", "attractor", "period", "largest_multiplier_modulus", "steps_survived"), summary)
    samples = args.out.with_name(args.out.stem + "_samples.csv")
    write_csv(
        samples, ("gamma", "index", "theta1", "dtheta1"),
        ((r.gamma, i, q[0], q[1]) for r in records for i, q in enumerate(r.samples)),
    )
    _finish(args, "scan", [out, samples], started, {"protocol": scan_metadata(args.transient, args.window)})
    return EXIT_OK


def cmd_orbit_find(args) -> int:
    from pdwalk.fixed_points import find_periodic_orbit

    started = time.perf_counter()
    _check_writable(args.out)
    orb = find_periodic_orbit(WalkerParams(args.gamma), args.period, args.guess, _cfg(args))
    write_csv(args.out, ("index", "theta1", "dtheta1"), ((i, q[0], q[1]) for i, q in enumerate(orb.points)))
    mults = [{"re": float(m.real), "im": float(m.imag), "abs": float(abs(m))} for m in orb.multipliers]
    _finish(
        args, "orbit-find", [args.out], started,
        {"multipliers": mults, "residual": orb.residual, "iterations": orb.iterations, "stable": orb.stable},
    )
    for m in mults:
        print(f"multiplier {m['re']:+.12f}{m['im']:+.12f}i  |{m['abs']:.12f}|")
    return EXIT_OK


def cmd_crisis(args) -> int:
    from pdwalk.fixed_points import detect_crisis

    started = time.perf_counter()
    _check_writable(args.out)
    gammas = list(args.gammas)
    for g in gammas:
        WalkerParams(g)
    rep = detect_crisis(gammas, _cfg(args), n_samples=args.samples, n_steps=args.n_steps, workers=args.workers)
    rows = [(s.gamma, int(s.survived), s.gap, s.gap_cells, s.cell, len(s.contacts), int(s.touching)) for s in rep.samples]
    write_csv(args.out, ("gamma", "survived", "gap", "gap_cells", "cell", "contacts", "touching"), rows)
    _finish(args, "crisis", [args.out], started, {"gamma_crisis": rep.gamma_crisis})
    if rep.gamma_crisis is not None:
        print(f"gamma_crisis {rep.gamma_crisis:.6f}")
    return EXIT_OK


def cmd_wcs(args) -> int:
    from pdwalk.basin import rotated, wcs_curve

    started = time.perf_counter()
    _check_writable(args.out)
    p = WalkerParams(args.gamma)
    if args.samples < 2:
        raise ValueError("samples must be >= 2")
    pts = wcs_curve(p, np.linspace(args.theta1[0], args.theta1[1], args.samples))
    rot = rotated(pts)
    write_csv(args.out, ("theta1", "dtheta1", "sum", "difference"), np.column_stack([pts, rot]).tolist())
    _finish(args, "wcs", [args.out], started)
    return EXIT_OK


def cmd_boundary(args) -> int:
    from pdwalk.basin import trace_domain_boundary

    started = time.perf_counter()
    _check_writable(args.out)
    curves = trace_domain_boundary(WalkerParams(args.gamma), _cfg(args), args.seeds, workers=args.workers)
    rows = [
        (c.edge, int(k), x, y, *seed)
        for c in curves.values()
        for (x, y), seed, k in zip(c.points, c.seeds, c.branch)
    ]
    write_csv(args.out, ("edge", "crossing", "theta1", "dtheta1", "seed_theta1", "seed_theta2", "seed_dtheta1", "seed_dtheta2"), rows)
    _finish(args, "boundary", [args.out], started, {e: {"points": len(c), "skipped": c.skipped} for e, c in curves.items()})
    return EXIT_OK


def cmd_linearized(args) -> int:
    from pdwalk.linearized import STUDY_COLUMNS, deformation_study

    started = time.perf_counter()
    _check_writable(args.out)
    if args.samples < 2:
        raise ValueError("samples must be >= 2")
    rows = deformation_study(WalkerParams(args.gamma), args.samples)
    write_csv(args.out, STUDY_COLUMNS, ([r[c] for c in STUDY_COLUMNS] for r in rows))
    _finish(args, "linearized", [args.out], started, {"solved": sum(r["status"] == "ok" for r in rows)})
    return EXIT_OK


def _read_points(path: Path, only: Optional[str]) -> np.ndarray:
    import csv

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"theta1", "dtheta1"} <= set(reader.fieldnames):
            raise ValueError(f"{path} needs theta1 and dtheta1 columns")
        if only is not None and only not in reader.fieldnames:
            raise ValueError(f"{path} has no column {only!r}")
        pts = [
            (float(row["theta1"]), float(row["dtheta1"]))
            for row in reader
            if only is None or row[only] not in ("0", "", "false", "False")
        ]
    return np.array(pts, dtype=np.float64).reshape(-1, 2)


def cmd_preimage(args) -> int:
    from pdwalk.linearized import preimage_T_of

    started = time.perf_counter()
    _check_writable(args.out)
    pts = _read_points(args.input, args.only)
    pre = preimage_T_of(pts)
    write_csv(args.out, ("theta1_post", "dtheta1_post", "theta1_pre", "dtheta1_pre"), np.column_stack([pts, pre]).tolist())
    _finish(args, "preimage", [args.out], started, {"points": len(pts)})
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pdwalk", description="Passive dynamic walker: step map, rasters, scans and analyses.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--config", type=Path, default=None, help="key=value configuration file")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def command(name: str, func: Callable, help: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help)
        p.set_defaults(func=func)
        return p

    p = command("step", cmd_step, "iterate the step map from one section point")
    p.add_argument("--gamma", type=float, required=True)
    p.add_argument("--q", type=_pair, required=True, help="theta1,dtheta1 on the post-impact section")
    p.add_argument("--n", type=int, default=1)
    _add_integrator(p)
    _add_out(p, required=False, help="CSV file (default: stdout)")

    for name, func, help in (
        ("raster", cmd_raster, "survival raster: domain and inverse images"),
        ("basin", cmd_basin, "basin of attraction raster"),
    ):
        p = command(name, func, help)
        p.add_argument("--gamma", type=float, required=True)
        _add_window(p)
        if name == "raster":
            p.add_argument("--n-max", type=int, default=3)
        else:
            p.add_argument("--n-short", type=int, default=50)
            p.add_argument("--n-long", type=int, default=200)
        _add_integrator(p)
        _add_workers(p)
        _add_out(p, help="output stem; .csv, .pgm and .json are written")

    p = command("scan", cmd_scan, "bifurcation scan over the slope")
    p.add_argument("--gamma-start", type=float, default=0.010)
    p.add_argument("--gamma-stop", type=float, default=0.020)
    p.add_argument("--gamma-step", type=float, default=2e-4)
    p.add_argument("--gammas", type=_floats, default=None, help="explicit comma-separated slopes")
    p.add_argument("--transient", type=int, default=500)
    p.add_argument("--window", type=int, default=256)
    _add_integrator(p)
    _add_out(p, help="output stem; summary and samples CSV are written")

    p = command("orbit-find", cmd_orbit_find, "Newton search for a periodic gait")
    p.add_argument("--gamma", type=float, required=True)
    p.add_argument("--period", type=int, default=1)
    p.add_argument("--guess", type=_pair, default="0.2,-0.2")
    _add_integrator(p)
    _add_out(p)

    p = command("crisis", cmd_crisis, "attractor to basin-boundary gap and crisis slope")
    p.add_argument("--gammas", type=_floats, default="0.0187,0.0189,0.01903,0.0195,0.0200")
    p.add_argument("--samples", type=int, default=2000)
    p.add_argument("--n-steps", type=int, default=10_000)
    _add_integrator(p)
    _add_workers(p)
    _add_out(p)

    p = command("wcs", cmd_wcs, "section trace of the stable separatrix")
    p.add_argument("--gamma", type=float, required=True)
    p.add_argument("--theta1", type=_pair, default="0.01,1.0")
    p.add_argument("--samples", type=int, default=200)
    _add_out(p)

    p = command("boundary", cmd_boundary, "trace the domain boundary by backward integration")
    p.add_argument("--gamma", type=float, required=True)
    p.add_argument("--seeds", type=int, default=80)
    _add_integrator(p)
    _add_workers(p)
    _add_out(p)

    p = command("linearized", cmd_linearized, "backstep study along the PQ segment")
    p.add_argument("--gamma", type=float, default=0.011)
    p.add_argument("--samples", type=int, default=200)
    _add_out(p)

    p = command("preimage", cmd_preimage, "pre-impact coordinates of post-impact section points")
    p.add_argument("--input", type=Path, required=True, help="CSV with theta1 and dtheta1 columns")
    p.add_argument("--only", default=None, help="keep rows whose column is nonzero, e.g. in_D")
    _add_out(p)
    parser.commands = sub.choices
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: Sequence[str]) -> None:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", type=Path, default=None)
    known, rest = pre.parse_known_args(argv)
    if known.config is None:
        return
    # a section literally named DEFAULT is read as an ordinary section so the
    # per-command keys stay separate from the shared ones
    cp = configparser.ConfigParser(interpolation=None, default_section="\0")
    try:
        with open(known.config, encoding="utf-8") as fh:
            cp.read_file(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config file: {exc}")
    except configparser.Error as exc:
        raise UsageError(f"malformed config file: {exc}")
    command = next((a for a in rest if not a.startswith("-")), None)
    commands = parser.commands
    if command not in commands:
        return
    target = commands[command]
    dests = {a.dest for a in target._actions}
    defaults = {}
    for section, strict in (("DEFAULT", False), (command, True)):
        if not cp.has_section(section):
            continue
        for key, value in cp.items(section):
            dest = key.replace("-", "_")
            if dest in dests:
                defaults[dest] = value
            elif strict:
                raise UsageError(f"unknown key {key!r} for command {command!r} in config file")
    target.set_defaults(**defaults)
    for action in target._actions:
        if action.dest in defaults:
            action.required = False


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("no command given; see pdwalk --help")
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if getattr(args, "workers", None) is not None:
            resolve_workers(args.workers)
        return args.func(args)
    except PermissionError as exc:
        print(f"cannot write output: {exc}", file=sys.stderr)
        return EXIT_CANTCREAT
    except (ParameterError, ValueError) as exc:
        print(f"invalid parameters: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        if args.command == "preimage" and not Path(args.input).exists():
            print(f"cannot read input: {exc}", file=sys.stderr)
            return EXIT_DATA
        print(f"cannot write output: {exc}", file=sys.stderr)
        return EXIT_CANTCREAT


if __name__ == "__main__":
    sys.exit(main())
