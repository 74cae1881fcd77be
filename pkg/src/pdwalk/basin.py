"""Region rasters on the post-impact section: domain, inverse images, basin.

Also the closed-form stable separatrix on the section and the tracing of
the domain boundary by backward integration from the edges of the contact
surface.
"""

from __future__ import annotations

import functools
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from numba import njit

from pdwalk import __version__
from pdwalk.hybrid import survival_kernel
from pdwalk.integrator import IntegratorConfig, section_crossings_backward
from pdwalk.model import WalkerParams
from pdwalk.parallel import ordered_map

log = logging.getLogger(__name__)

N_SHORT = 50
N_LONG = 200


@dataclass(frozen=True)
class GridSpec:
    theta1: Tuple[float, float] = (0.01, 1.0)
    dtheta1: Tuple[float, float] = (-1.0, -0.01)
    nx: int = 500
    ny: int = 500

    def __post_init__(self):
        if not self.theta1[0] < self.theta1[1] or not self.dtheta1[0] < self.dtheta1[1]:
            raise ValueError("grid ranges must satisfy lo < hi")
        if self.nx < 2 or self.ny < 2:
            raise ValueError("grid needs at least 2 cells per axis")
        if not self.theta1[0] > 0:
            raise ValueError("theta1 range must be strictly positive")

    @property
    def dx(self) -> float:
        return (self.theta1[1] - self.theta1[0]) / self.nx

    @property
    def dy(self) -> float:
        return (self.dtheta1[1] - self.dtheta1[0]) / self.ny

    @property
    def diagonal(self) -> float:
        return math.hypot(self.dx, self.dy)

    def centers(self) -> Tuple[np.ndarray, np.ndarray]:
        """Cell-center coordinates along each axis (ascending)."""
        x = self.theta1[0] + (np.arange(self.nx) + 0.5) * self.dx
        y = self.dtheta1[0] + (np.arange(self.ny) + 0.5) * self.dy
        return x, y

    def as_dict(self) -> dict:
        return {"theta1": list(self.theta1), "dtheta1": list(self.dtheta1), "nx": self.nx, "ny": self.ny}


@dataclass
class RegionRaster:
    """Per-cell step counts; ``survival[j, i]`` belongs to ``dtheta1[j]``, ``theta1[i]``."""

    spec: GridSpec
    survival: np.ndarray
    n_max: int
    metadata: Dict[str, object] = field(default_factory=dict)
    n_short: Optional[int] = None

    def in_D(self) -> np.ndarray:
        return self.survival >= 1

    def in_inverse_image(self, n: int) -> np.ndarray:
        """Cells whose orbits take at least ``n + 1`` steps."""
        if n + 1 > self.n_max:
            raise ValueError(f"inverse image {n} needs n_max >= {n + 1}")
        return self.survival >= n + 1

    def in_B(self) -> np.ndarray:
        short = self.n_short if self.n_short is not None else min(N_SHORT, self.n_max)
        survives_short = self.survival >= short
        survives_long = self.survival >= self.n_max
        bad = survives_long & ~survives_short
        if bad.any():
            log.error("basin protocol: %d cells survive the long run but not the short one", int(bad.sum()))
        return survives_short & survives_long

    def labels(self, depth: int = 2) -> Dict[str, np.ndarray]:
        out = {"in_D": self.in_D()}
        for n in range(1, depth + 1):
            out[f"in_S{n}D"] = self.in_inverse_image(n)
        out["in_B"] = self.in_B()
        return out

    def area_fraction(self, mask: np.ndarray) -> float:
        return float(mask.mean())


@njit(cache=True)
def _survival_rows(xs, ys, gamma, n_max, rtol, atol, max_step, t_max, fall_limit, sub):
    """Survival counts for the cartesian product ``ys x xs``.

    With ``sub > 1`` each cell is sampled on a ``sub x sub`` lattice and the
    count is the floor of the mean.
    """
    ny = ys.shape[0]
    nx = xs.shape[0]
    out = np.zeros((ny, nx), dtype=np.int32)
    if sub <= 1:
        for j in range(ny):
            for i in range(nx):
                out[j, i] = survival_kernel(xs[i], ys[j], gamma, n_max, rtol, atol, max_step, t_max, fall_limit)
        return out
    dx = xs[1] - xs[0] if nx > 1 else 0.0
    dy = ys[1] - ys[0] if ny > 1 else 0.0
    for j in range(ny):
        for i in range(nx):
            total = 0
            for a in range(sub):
                for b in range(sub):
                    x = xs[i] + ((a + 0.5) / sub - 0.5) * dx
                    y = ys[j] + ((b + 0.5) / sub - 0.5) * dy
                    total += survival_kernel(x, y, gamma, n_max, rtol, atol, max_step, t_max, fall_limit)
            out[j, i] = total // (sub * sub)
    return out


def _raster_chunk(args):
    xs, ys, gamma, n_max, cfg, sub = args
    return _survival_rows(
        xs, ys, gamma, n_max, cfg.rel_tol, cfg.abs_tol, cfg.max_step, cfg.t_max, cfg.theta1_fall_limit, sub
    )


def survival_grid(
    p: WalkerParams,
    xs: np.ndarray,
    ys: np.ndarray,
    n_max: int,
    cfg: IntegratorConfig = IntegratorConfig(),
    workers: Optional[int] = None,
    supersample: int = 1,
    rows_per_chunk: int = 8,
) -> np.ndarray:
    xs = np.ascontiguousarray(xs, dtype=np.float64)
    ys = np.ascontiguousarray(ys, dtype=np.float64)
    chunks = [
        (xs, ys[j : j + rows_per_chunk], p.gamma, n_max, cfg, supersample)
        for j in range(0, len(ys), rows_per_chunk)
    ]
    parts = ordered_map(_raster_chunk, chunks, workers)
    return np.vstack(parts) if parts else np.zeros((0, len(xs)), dtype=np.int32)


def raster_metadata(p: WalkerParams, spec: GridSpec, n_max: int, cfg: IntegratorConfig, **extra) -> dict:
    meta = {
        "gamma": p.gamma,
        "grid": spec.as_dict(),
        "n_max": n_max,
        "integrator": cfg.as_dict(),
        "sampling": "cell-center",
        "toolkit_version": __version__,
    }
    meta.update(extra)
    return meta


def compute_raster(
    p: WalkerParams,
    spec: GridSpec,
    n_max: int,
    cfg: IntegratorConfig = IntegratorConfig(),
    workers: Optional[int] = None,
    supersample: int = 1,
) -> RegionRaster:
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    xs, ys = spec.centers()
    surv = survival_grid(p, xs, ys, n_max, cfg, workers, supersample)
    meta = raster_metadata(p, spec, n_max, cfg, sampling=f"{supersample}x{supersample}" if supersample > 1 else "cell-center")
    return RegionRaster(spec, surv, n_max, meta)


def compute_basin(
    p: WalkerParams,
    spec: GridSpec,
    cfg: IntegratorConfig = IntegratorConfig(),
    n_short: int = N_SHORT,
    n_long: int = N_LONG,
    workers: Optional[int] = None,
    supersample: int = 1,
) -> RegionRaster:
    """Raster whose basin label requires surviving both ``n_short`` and ``n_long`` steps.

    One orbit per cell is run to ``n_long``; its step count answers both
    thresholds.
    """
    if not n_short < n_long:
        raise ValueError("n_short must be smaller than n_long")
    r = compute_raster(p, spec, n_long, cfg, workers, supersample)
    r.n_short = n_short
    r.metadata["basin_protocol"] = {"n_short": n_short, "n_long": n_long}
    return r


def wcs_curve(p: WalkerParams, theta1) -> np.ndarray:
    """Section trace of the stable separatrix: rows ``(theta1, dtheta1)``."""
    th = np.asarray(theta1, dtype=np.float64)
    if np.any(th <= 0):
        raise ValueError("theta1 samples must be positive")
    return np.column_stack([th, -2.0 * np.sin((th - p.gamma) / 2.0)])


def rotated(points: np.ndarray) -> np.ndarray:
    """Rotated view ``(theta1 + dtheta1, theta1 - dtheta1)`` of section points."""
    pts = np.asarray(points, dtype=np.float64)
    return np.column_stack([pts[:, 0] + pts[:, 1], pts[:, 0] - pts[:, 1]])


# --------------------------------------------------------------------------
# domain boundary by backward integration

BOUNDARY_MAX_CROSSINGS = 8
BOUNDARY_T_BUDGET = 40.0
BOUNDARY_RESIDUAL_TOL = 1e-8


@dataclass
class BoundaryCurve:
    """Section points on the backward image of one edge of the contact surface.

    ``seeds`` are the contact states the backward orbits start from and
    ``branch`` the index of the backward crossing that landed on the
    post-impact surface.  Rows are ordered by ``theta1``.
    """

    edge: str
    points: np.ndarray
    seeds: np.ndarray
    branch: np.ndarray
    skipped: int = 0

    def __len__(self) -> int:
        return len(self.points)


def backward_crossings(y0, gamma: float, cfg: IntegratorConfig, t_budget: float = BOUNDARY_T_BUDGET):
    """Times and states where the backward orbit from ``y0`` crosses ``theta2 = 2 theta1``."""
    out_t = np.empty(BOUNDARY_MAX_CROSSINGS)
    out_y = np.empty((BOUNDARY_MAX_CROSSINGS, 4))
    n = section_crossings_backward(
        np.asarray(y0, dtype=np.float64), gamma, cfg.rel_tol, cfg.abs_tol, cfg.max_step,
        t_budget, cfg.theta1_fall_limit, BOUNDARY_MAX_CROSSINGS, out_t, out_y,
    )
    return out_t[:n], out_y[:n]


def landing_residuals(y0, gamma: float, cfg: IntegratorConfig, t_budget: float = BOUNDARY_T_BUDGET) -> np.ndarray:
    """Post-impact surface residual at each admissible backward crossing.

    A crossing is admissible when it lies on the section side (``theta1 > 0``,
    ``dtheta1 < 0``) and no earlier crossing would have been a genuine
    forward contact.  Inadmissible slots are NaN.
    """
    res = np.full(BOUNDARY_MAX_CROSSINGS, np.nan)
    for k, y in enumerate(backward_crossings(y0, gamma, cfg, t_budget)[1]):
        if y[0] < 0.0 and 2.0 * y[2] - y[3] < 0.0:
            break
        if y[0] > 0.0 and y[2] < 0.0:
            res[k] = y[3] - y[2] * (1.0 - math.cos(2.0 * y[0]))
    return res


@dataclass(frozen=True)
class Landing:
    """A backward orbit from ``seed`` that lands on the post-impact surface."""

    free: float
    crossing: int
    time: float
    seed: np.ndarray
    state: np.ndarray


def landing_roots(make_seed, free: np.ndarray, gamma: float, cfg: IntegratorConfig, t_budget: float = BOUNDARY_T_BUDGET) -> List[Landing]:
    """Solve for values of a free seed coordinate whose backward orbit lands on the section.

    ``make_seed`` maps the free coordinate to a full contact state.  Sign
    changes of each crossing's residual along ``free`` are refined by Brent's
    method; roots whose residual is not tiny (jumps between crossings) are
    dropped.
    """
    from scipy.optimize import brentq

    table = np.array([landing_residuals(make_seed(b), gamma, cfg, t_budget) for b in free])
    found = []
    for k in range(BOUNDARY_MAX_CROSSINGS):
        r = table[:, k]
        ok = np.isfinite(r[:-1]) & np.isfinite(r[1:]) & (np.sign(r[:-1]) * np.sign(r[1:]) < 0)
        for i in np.nonzero(ok)[0]:

            def fk(b, k=k):
                v = landing_residuals(make_seed(b), gamma, cfg, t_budget)[k]
                if not np.isfinite(v):
                    raise ValueError("crossing lost inside bracket")
                return v

            try:
                b = brentq(fk, free[i], free[i + 1], xtol=1e-13)
            except ValueError:
                continue
            seed = make_seed(b)
            ts, ys = backward_crossings(seed, gamma, cfg, t_budget)
            if len(ys) <= k:
                continue
            y = ys[k]
            if abs(y[3] - y[2] * (1.0 - math.cos(2.0 * y[0]))) > BOUNDARY_RESIDUAL_TOL:
                continue
            found.append(Landing(float(b), k, float(ts[k]), seed, y.copy()))
    return found


def _edge_seed(edge: str, a: float, b: float) -> np.ndarray:
    """Contact state on an edge of the contact surface.

    ``stance_vertical``: ``(0, 0, a, b)``; ``swing_rate``: ``(a, 2a, b, 2b)``.
    """
    if edge == "stance_vertical":
        return np.array([0.0, 0.0, a, b])
    if edge == "swing_rate":
        return np.array([a, 2.0 * a, b, 2.0 * b])
    raise ValueError(f"unknown edge {edge!r}")


def _trace_family(edge, a, free, gamma, cfg, t_budget):
    """Landings along one seed line with the other seed coordinate fixed at ``a``."""
    roots = landing_roots(lambda b: _edge_seed(edge, a, b), free, gamma, cfg, t_budget)
    return [(l.state[0], l.state[2], l.seed, l.crossing) for l in roots]


def _boundary_job(args):
    edge, a, free, gamma, cfg, t_budget = args
    return _trace_family(edge, a, free, gamma, cfg, t_budget)


def trace_domain_boundary(
    p: WalkerParams,
    cfg: IntegratorConfig = IntegratorConfig(),
    n_seeds: int = 80,
    n_free: int = 240,
    t_budget: float = BOUNDARY_T_BUDGET,
    workers: Optional[int] = None,
    seeds: Optional[Dict[str, List[float]]] = None,
) -> Dict[str, BoundaryCurve]:
    """Backward images of the two edges of the contact surface on the section.

    The ``stance_vertical`` edge holds contact states with ``theta1 = 0``; the
    ``swing_rate`` edge those with ``2 dtheta1 = dtheta2``.  Each seed line
    fixes one coordinate and the free one is solved so the backward orbit
    lands on the post-impact surface.  ``seeds`` overrides the fixed seed
    coordinates per edge; a zero stance rate on the ``theta1 = 0`` edge is
    the upright rest state and is skipped.
    """
    g = p.gamma
    v_sep = math.sqrt(2.0 * (1.0 - math.cos(g)))
    families = {
        # stance rate at theta1 = 0, just faster than the saddle-energy value
        "stance_vertical": [-v_sep * (1.0 + e) for e in np.geomspace(1e-4, 4.0, n_seeds)],
        "swing_rate": list(np.linspace(-0.6, -0.005, n_seeds)),
    }
    if seeds is not None:
        unknown = set(seeds) - set(families)
        if unknown:
            raise ValueError(f"unknown edges {sorted(unknown)}")
        families = {e: list(v) for e, v in seeds.items()}
    curves = {}
    for edge, fixed in families.items():
        jobs = []
        skipped = 0
        for a in fixed:
            if edge == "stance_vertical" and abs(a) < 1e-12:
                skipped += 1
                continue
            if edge == "stance_vertical":
                free = np.linspace(2.0 * a + 1e-9, 2.5, n_free)
            else:
                free = np.linspace(-1.2, -1e-3, n_free)
            jobs.append((edge, float(a), free, g, cfg, t_budget))
        parts = ordered_map(_boundary_job, jobs, workers)
        # seed lines whose backward orbits never land count as skipped too
        skipped += sum(1 for part in parts if not part)
        rows = sorted((r for part in parts for r in part), key=lambda r: (r[0], r[1]))
        if rows:
            pts = np.array([[r[0], r[1]] for r in rows])
            starts = np.array([r[2] for r in rows])
            branch = np.array([r[3] for r in rows], dtype=np.int64)
        else:
            pts, starts, branch = np.empty((0, 2)), np.empty((0, 4)), np.empty(0, dtype=np.int64)
        curves[edge] = BoundaryCurve(edge, pts, starts, branch, skipped)
    return curves
