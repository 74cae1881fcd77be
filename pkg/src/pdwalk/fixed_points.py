"""Periodic gaits of the step map, their multipliers, and slope scans.

Newton's method runs on the two section coordinates with a central
finite-difference Jacobian of the composed step map.  Scans over ``gamma``
continue the attractor from one slope to the next.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from pdwalk.hybrid import orbit_kernel, step_map
from pdwalk.integrator import CONTACT, IntegratorConfig
from pdwalk.model import SectionPoint, WalkerParams

log = logging.getLogger(__name__)

COLD_SEED = (0.2, -0.2)
TRANSIENT = 500
WINDOW = 256
RECURRENCE_TOL = 1e-6
MAX_PERIOD = 64


class NonConvergence(RuntimeError):
    pass


class FellDuringNewton(RuntimeError):
    pass


@dataclass
class PeriodicOrbit:
    points: List[SectionPoint]
    period: int
    multipliers: np.ndarray
    gamma: float
    residual: float = math.nan
    iterations: int = 0

    @property
    def spectral_radius(self) -> float:
        return float(np.max(np.abs(self.multipliers)))

    @property
    def stable(self) -> bool:
        return self.spectral_radius < 1.0


def _composed(q, p, cfg, period):
    out = step_map(q, p, cfg, period)
    if out is None:
        raise FellDuringNewton(f"iterate {tuple(q)} fell within {period} steps at gamma={p.gamma}")
    return out


def map_jacobian(q, p: WalkerParams, cfg: IntegratorConfig, period: int = 1, h: float = 1e-7) -> np.ndarray:
    """Central-difference Jacobian of the ``period``-fold step map."""
    q = np.asarray(q, dtype=np.float64)
    jac = np.empty((2, 2))
    for j in range(2):
        e = np.zeros(2)
        e[j] = h
        jac[:, j] = (_composed(q + e, p, cfg, period) - _composed(q - e, p, cfg, period)) / (2 * h)
    return jac


def find_periodic_orbit(
    p: WalkerParams,
    period: int = 1,
    guess=COLD_SEED,
    cfg: IntegratorConfig = IntegratorConfig(),
    tol: float = 1e-10,
    max_iter: int = 50,
    fd_step: float = 1e-7,
) -> PeriodicOrbit:
    if period < 1:
        raise ValueError("period must be >= 1")
    q = np.asarray(guess, dtype=np.float64).copy()
    if not (q[0] > 0 and q[1] < 0):
        raise ValueError(f"guess must have theta1 > 0 and dtheta1 < 0, got {tuple(q)}")
    for it in range(1, max_iter + 1):
        F = _composed(q, p, cfg, period) - q
        J = map_jacobian(q, p, cfg, period, fd_step) - np.eye(2)
        try:
            dq = np.linalg.solve(J, -F)
        except np.linalg.LinAlgError as exc:
            raise NonConvergence(f"singular Newton matrix at {tuple(q)}") from exc
        q = q + dq
        if not np.all(np.isfinite(q)) or q[0] <= 0:
            raise NonConvergence(f"Newton left the section at iteration {it}")
        if np.max(np.abs(dq)) < tol:
            break
    else:
        raise NonConvergence(f"no convergence in {max_iter} iterations (last |dq| = {np.max(np.abs(dq)):.3g})")

    pts = [SectionPoint(float(q[0]), float(q[1]))]
    x = q
    for _ in range(period - 1):
        x = _composed(x, p, cfg, 1)
        pts.append(SectionPoint(float(x[0]), float(x[1])))
    mult = np.linalg.eigvals(map_jacobian(q, p, cfg, period, fd_step))
    mult = mult[np.argsort(-np.abs(mult), kind="stable")]
    residual = float(np.max(np.abs(_composed(q, p, cfg, period) - q)))
    return PeriodicOrbit(pts, period, mult, p.gamma, residual, it)


def orbit_residual(orbit: PeriodicOrbit, cfg: IntegratorConfig) -> float:
    """``max |S^period(q) - q|`` re-evaluated under ``cfg``."""
    q = np.asarray(orbit.points[0])
    out = step_map(q, WalkerParams(orbit.gamma), cfg, orbit.period)
    return math.inf if out is None else float(np.max(np.abs(out - q)))


# --------------------------------------------------------------------------
# scans


@dataclass
class ScanRecord:
    gamma: float
    attractor_kind: str  # "Period", "Chaotic" or "None"
    period: Optional[int]
    samples: np.ndarray
    largest_multiplier_modulus: Optional[float] = None
    survived: int = 0

    @property
    def label(self) -> str:
        if self.attractor_kind == "Period":
            return f"Period({self.period})"
        return self.attractor_kind


def run_orbit(q0, p: WalkerParams, n: int, cfg: IntegratorConfig) -> Tuple[np.ndarray, int]:
    """Section points visited by up to ``n`` steps, and the number survived."""
    pts = np.empty((n + 1, 2))
    durs = np.empty(n)
    k, _ = orbit_kernel(
        float(q0[0]), float(q0[1]), p.gamma, n,
        cfg.rel_tol, cfg.abs_tol, cfg.max_step, cfg.t_max, cfg.theta1_fall_limit, pts, durs,
    )
    return pts[: k + 1], int(k)


def classify_period(samples: np.ndarray, tol: float = RECURRENCE_TOL, max_period: int = MAX_PERIOD) -> Optional[int]:
    n = len(samples)
    for k in range(1, min(max_period, n // 2) + 1):
        if np.max(np.abs(samples[k:] - samples[:-k])) < tol:
            return k
    return None


def attractor_record(
    p: WalkerParams,
    seed,
    cfg: IntegratorConfig = IntegratorConfig(),
    transient: int = TRANSIENT,
    window: int = WINDOW,
    with_multipliers: bool = True,
) -> ScanRecord:
    pts, k = run_orbit(seed, p, transient + window, cfg)
    if k < transient + window:
        return ScanRecord(p.gamma, "None", None, np.empty((0, 2)), survived=k)
    samples = pts[transient + 1 :]
    per = classify_period(samples)
    if per is None:
        return ScanRecord(p.gamma, "Chaotic", None, samples, survived=k)
    modulus = None
    if with_multipliers:
        try:
            orb = find_periodic_orbit(p, per, samples[-1], cfg)
            modulus = orb.spectral_radius
        except (NonConvergence, FellDuringNewton) as exc:
            log.warning("multiplier evaluation failed at gamma=%g: %s", p.gamma, exc)
    return ScanRecord(p.gamma, "Period", per, samples, modulus, survived=k)


CONTINUATION_STEP = 2e-4


def _bridge(g_from: float, g_to: float, dg: float) -> List[float]:
    """Intermediate slopes strictly between ``g_from`` and ``g_to``, at most ``dg`` apart."""
    n = int(math.ceil(abs(g_to - g_from) / dg - 1e-9))
    return [g_from + (g_to - g_from) * i / n for i in range(1, n)] if n > 1 else []


def scan_bifurcation(
    gammas: Sequence[float],
    cfg: IntegratorConfig = IntegratorConfig(),
    seed=COLD_SEED,
    transient: int = TRANSIENT,
    window: int = WINDOW,
    with_multipliers: bool = True,
    continuation_step: float = CONTINUATION_STEP,
) -> List[ScanRecord]:
    """Sequential continuation scan: each slope starts from the previous attractor.

    The basin is thin, so when neighbouring slopes are further apart than
    ``continuation_step`` the attractor is carried across unrecorded
    intermediate slopes first.
    """
    records = []
    current = np.asarray(seed, dtype=np.float64)
    prev_g = None
    for g in gammas:
        g = float(g)
        if prev_g is not None and current is not None:
            for gi in _bridge(prev_g, g, continuation_step):
                pts, k = run_orbit(current, WalkerParams(gi), transient, cfg)
                if k < transient:
                    break
                current = pts[-1]
        rec = attractor_record(WalkerParams(g), current, cfg, transient, window, with_multipliers)
        records.append(rec)
        if rec.attractor_kind != "None":
            current = rec.samples[-1]
        prev_g = g
    return records


def scan_metadata(transient: int = TRANSIENT, window: int = WINDOW) -> dict:
    return {
        "transient": transient,
        "window": window,
        "recurrence_tol": RECURRENCE_TOL,
        "max_period": MAX_PERIOD,
        "cold_seed": list(COLD_SEED),
    }


def bisect_gamma(predicate: Callable[[float], bool], lo: float, hi: float, tol: float = 1e-4) -> float:
    """Bisect for the switch of ``predicate`` (true at ``lo``, false at ``hi``)."""
    if not predicate(lo) or predicate(hi):
        raise ValueError(f"predicate must hold at {lo} and fail at {hi}")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if predicate(mid):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def continue_fixed_point(
    g_target: float, cfg: IntegratorConfig = IntegratorConfig(), g_start: float = 0.011, dg: float = 5e-4
) -> PeriodicOrbit:
    """Period-1 gait at ``g_target``, continued by Newton from the cold seed at ``g_start``."""
    guess = COLD_SEED
    orb = None
    for g in [g_start] + _bridge(g_start, g_target, dg) + [g_target]:
        orb = find_periodic_orbit(WalkerParams(g), 1, guess, cfg)
        guess = orb.points[0]
    return orb


def locate_period_doubling(
    lo: float = 0.014, hi: float = 0.016, cfg: IntegratorConfig = IntegratorConfig(), tol: float = 1e-4
) -> float:
    """Slope where the period-1 gait loses stability through a multiplier at -1."""
    state = {"seed": continue_fixed_point(lo, cfg).points[0]}

    def stable(g: float) -> bool:
        orb = find_periodic_orbit(WalkerParams(g), 1, state["seed"], cfg)
        state["seed"] = orb.points[0]
        return orb.stable

    return bisect_gamma(stable, lo, hi, tol)


def survives(g: float, seed, n_steps: int, cfg: IntegratorConfig) -> bool:
    _, k = run_orbit(seed, WalkerParams(g), n_steps, cfg)
    return k == n_steps


def attractor_seed(g_target: float, cfg: IntegratorConfig = IntegratorConfig(), g_start: float = 0.011, dg: float = 2e-4):
    """Continue the attractor from ``g_start`` up to ``g_target`` and return a point on it."""
    gammas = list(np.arange(g_start, g_target, dg)) + [g_target]
    seed = np.asarray(COLD_SEED, dtype=np.float64)
    for g in gammas:
        pts, k = run_orbit(seed, WalkerParams(float(g)), TRANSIENT, cfg)
        if k < TRANSIENT:
            return None
        seed = pts[-1]
    return seed


def locate_disappearance(
    lo: float = 0.0185,
    hi: float = 0.0200,
    cfg: IntegratorConfig = IntegratorConfig(),
    n_steps: int = 10_000,
    tol: float = 1e-4,
) -> float:
    """Slope where orbits started on the attractor stop surviving ``n_steps`` steps."""
    seed_lo = attractor_seed(lo, cfg)
    if seed_lo is None:
        raise ValueError(f"no attractor at gamma={lo}")

    def ok(g: float) -> bool:
        return survives(g, seed_lo, n_steps, cfg)

    return bisect_gamma(ok, lo, hi, tol)


# --------------------------------------------------------------------------
# boundary crisis

CRISIS_SAMPLES = 2000
CRISIS_MARGIN = 0.03
CRISIS_RASTER = 100
CRISIS_BASIN_STEPS = 200
CONTACT_CELLS = 2.0


@dataclass
class CrisisSample:
    gamma: float
    survived: bool
    gap: float  # distance from the attractor to the basin boundary; nan when no attractor
    cell: float  # diagonal of the local raster cell
    contacts: np.ndarray  # attractor samples within CONTACT_CELLS cells of the boundary

    @property
    def gap_cells(self) -> float:
        return self.gap / self.cell if self.cell > 0 else math.nan

    @property
    def touching(self) -> bool:
        return self.survived and self.gap_cells <= CONTACT_CELLS


@dataclass
class CrisisReport:
    samples: List[CrisisSample]
    gamma_crisis: Optional[float]


def _in_basin(x, y, p: WalkerParams, cfg: IntegratorConfig, n_steps: int) -> bool:
    _, k = run_orbit((x, y), p, n_steps, cfg)
    return k == n_steps


def attractor_gap(
    p: WalkerParams,
    samples: np.ndarray,
    cfg: IntegratorConfig = IntegratorConfig(),
    margin: float = CRISIS_MARGIN,
    resolution: int = CRISIS_RASTER,
    n_steps: int = CRISIS_BASIN_STEPS,
    refine: int = 12,
    workers: Optional[int] = None,
) -> Tuple[float, float, np.ndarray]:
    """Distance from attractor samples to the edge of their basin.

    A local raster around the samples gives, for every sample, the nearest
    cell that leaves the basin.  For the closest few pairs the crossing on
    the joining segment is bisected.  Returns ``(gap, cell_diagonal,
    per-sample raster distances)``.
    """
    from pdwalk.basin import survival_grid

    pts = np.asarray(samples, dtype=np.float64)
    xs = np.linspace(pts[:, 0].min() - margin, pts[:, 0].max() + margin, resolution)
    ys = np.linspace(pts[:, 1].min() - margin, pts[:, 1].max() + margin, resolution)
    cell = math.hypot(xs[1] - xs[0], ys[1] - ys[0])
    surv = survival_grid(p, xs, ys, n_steps, cfg, workers)
    out = np.argwhere(surv < n_steps)
    if len(out) == 0:
        return math.inf, cell, np.full(len(pts), math.inf)
    ox = xs[out[:, 1]]
    oy = ys[out[:, 0]]
    dist = np.empty(len(pts))
    nearest = np.empty(len(pts), dtype=np.int64)
    for i, (x, y) in enumerate(pts):
        d2 = (ox - x) ** 2 + (oy - y) ** 2
        nearest[i] = int(np.argmin(d2))
        dist[i] = math.sqrt(d2[nearest[i]])

    gap = math.inf
    for i in np.argsort(dist, kind="stable")[:refine]:
        a = pts[i]
        b = np.array([ox[nearest[i]], oy[nearest[i]]])
        if not _in_basin(a[0], a[1], p, cfg, n_steps):
            return 0.0, cell, dist
        lo, hi = 0.0, 1.0
        while (hi - lo) * dist[i] > 1e-3 * cell:
            mid = 0.5 * (lo + hi)
            x = a + mid * (b - a)
            if _in_basin(x[0], x[1], p, cfg, n_steps):
                lo = mid
            else:
                hi = mid
        gap = min(gap, hi * dist[i])
    return gap, cell, dist


def detect_crisis(
    gammas: Sequence[float],
    cfg: IntegratorConfig = IntegratorConfig(),
    n_samples: int = CRISIS_SAMPLES,
    n_steps: int = 10_000,
    tol: float = 1e-4,
    workers: Optional[int] = None,
) -> CrisisReport:
    """Attractor-to-basin-boundary gap along increasing slopes.

    The attractor is continued from one slope to the next.  The crisis slope
    is bisected between the last slope whose attractor survives ``n_steps``
    steps and the first that does not.
    """
    gammas = sorted(float(g) for g in gammas)
    if not gammas:
        raise ValueError("need at least one slope")
    seed = attractor_seed(gammas[0], cfg)
    out: List[CrisisSample] = []
    last_ok = None
    first_bad = None
    for g in gammas:
        p = WalkerParams(g)
        alive = seed is not None and survives(g, seed, n_steps, cfg)
        if not alive:
            out.append(CrisisSample(g, False, math.nan, math.nan, np.empty((0, 2))))
            if first_bad is None:
                first_bad = g
            continue
        pts, k = run_orbit(seed, p, TRANSIENT + n_samples, cfg)
        samples = pts[TRANSIENT + 1 :]
        gap, cell, dist = attractor_gap(p, samples, cfg, workers=workers)
        out.append(CrisisSample(g, True, gap, cell, samples[dist <= CONTACT_CELLS * cell]))
        seed = samples[-1]
        if first_bad is None:
            last_ok = g
    g_crisis = None
    if last_ok is not None and first_bad is not None:
        g_crisis = locate_disappearance(last_ok, first_bad, cfg, n_steps, tol)
    return CrisisReport(out, g_crisis)
