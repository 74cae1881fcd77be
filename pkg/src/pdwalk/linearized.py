"""Linearized swing solution and the backstep problem on the segment PQ.

Near the upright state the stance angle follows
``theta1 = gamma + c1 e^t + c2 e^-t`` and the combination
``theta2 - (theta1 - gamma)/2`` is a unit-frequency oscillator
``k cos(t + phi)``.  Starting from a pre-impact state at ``t = 0`` the
backstep problem asks for the step duration ``delta`` such that the state at
``-delta`` lies on the post-impact surface.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import brentq

from pdwalk.basin import landing_roots
from pdwalk.hybrid import apply_impact
from pdwalk.integrator import IntegratorConfig
from pdwalk.model import FullState, SectionPoint, WalkerParams

SQRT2 = math.sqrt(2.0)

# PQ as a line in modal coefficients: c1 = C1_INTERCEPT + C1_SLOPE * c2
C1_INTERCEPT = -0.2
C1_SLOPE = -3.3
C2_RANGE = (0.0038, 0.075)

DELTA_MAX = 30.0
DELTA_SCAN_POINTS = 30_000
MAX_BRANCH_JUMP = 0.5
SECANT_MARGIN = 1e-6


class NoRoot(RuntimeError):
    pass


class BranchJump(RuntimeError):
    pass


@dataclass(frozen=True)
class ModalCoords:
    c1: float
    c2: float
    k: float
    phi: float


@dataclass(frozen=True)
class BackstepSolution:
    c1: float
    c2: float
    delta: float
    phi: float
    k: float
    theta1_back: float
    dtheta1_back: float
    d: float

    @property
    def phi_mod(self) -> float:
        return self.phi % (2 * math.pi)


def modal_from_state(s, p: WalkerParams) -> ModalCoords:
    th1, th2, w1, w2 = (float(v) for v in s)
    x = th1 - p.gamma
    c1 = 0.5 * (x + w1)
    c2 = 0.5 * (x - w1)
    u = th2 - 0.5 * x
    du = w2 - 0.5 * w1
    k = math.hypot(u, du)
    phi = math.atan2(-du, u) % (2 * math.pi) if k > 0 else 0.0
    return ModalCoords(c1, c2, k, phi)


def linearized_flow(m: ModalCoords, t: float, p: WalkerParams) -> FullState:
    ep = math.exp(t)
    em = math.exp(-t)
    th1 = p.gamma + m.c1 * ep + m.c2 * em
    w1 = m.c1 * ep - m.c2 * em
    th2 = 0.5 * (th1 - p.gamma) + m.k * math.cos(t + m.phi)
    w2 = 0.5 * w1 - m.k * math.sin(t + m.phi)
    return FullState(th1, th2, w1, w2)


# --------------------------------------------------------------------------
# backstep system


def _back_state(delta, c1, c2, gamma):
    """Stance angle/rate at ``-delta`` and the swing-oscillator rectangular parts."""
    em = np.exp(-delta)
    ep = np.exp(delta)
    th = c1 * em + c2 * ep + gamma
    w = c1 * em - c2 * ep
    kc = 1.5 * th + 0.5 * gamma
    ks = -w * (0.5 - np.cos(2.0 * th))
    return th, w, kc, ks


def _closing_residual(delta, c1, c2, gamma):
    # k cos(phi) with phi = psi + delta, expanded so no polar angle is needed
    _, _, kc, ks = _back_state(delta, c1, c2, gamma)
    return kc * np.cos(delta) - ks * np.sin(delta) - 1.5 * (c1 + c2 + 4.0 * gamma / 3.0)


def backstep_residuals(sol: BackstepSolution, p: WalkerParams) -> np.ndarray:
    """Residuals of the five backstep equations at ``sol``."""
    g = p.gamma
    c1, c2, dl = sol.c1, sol.c2, sol.delta
    r = np.empty(5)
    r[0] = sol.theta1_back - (c1 * math.exp(-dl) + c2 * math.exp(dl) + g)
    r[1] = sol.dtheta1_back - (c1 * math.exp(-dl) - c2 * math.exp(dl))
    r[2] = sol.k * math.cos(-dl + sol.phi) - (1.5 * sol.theta1_back + 0.5 * g)
    r[3] = sol.k * math.sin(-dl + sol.phi) + sol.dtheta1_back * (0.5 - math.cos(2.0 * sol.theta1_back))
    r[4] = sol.k * math.cos(sol.phi) - 1.5 * (c1 + c2 + 4.0 * g / 3.0)
    return r


def backstep_roots(c1: float, c2: float, p: WalkerParams, delta_max: float = DELTA_MAX) -> List[float]:
    """All admissible step durations in ``(0, delta_max]``, ascending.

    Admissible roots start from a stance angle in ``(0, pi/2)`` (so the swing
    phase angle at ``-delta`` has non-negative cosine) and have
    ``pi/2 < phi < 3 pi/2`` modulo ``2 pi``.
    """
    g = p.gamma
    grid = np.linspace(delta_max / DELTA_SCAN_POINTS, delta_max, DELTA_SCAN_POINTS)
    r = _closing_residual(grid, c1, c2, g)
    th, _, kc, _ = _back_state(grid, c1, c2, g)
    ok = (kc >= 0.0) & (th > 0.0) & (th < math.pi / 2) & np.isfinite(r)
    roots = []
    idx = np.nonzero(ok[:-1] & ok[1:] & (np.sign(r[:-1]) != np.sign(r[1:])))[0]
    for i in idx:
        lo, hi = grid[i], grid[i + 1]
        root = brentq(_closing_residual, lo, hi, args=(c1, c2, g), xtol=1e-14, rtol=4 * np.finfo(float).eps)
        sol = _solution_at(root, c1, c2, g)
        if math.pi / 2 < sol.phi_mod < 3 * math.pi / 2 and math.cos(sol.phi - sol.delta) >= 1 / SQRT2 - 1e-6:
            roots.append(root)
    return roots


def _solution_at(delta, c1, c2, gamma) -> BackstepSolution:
    th, w, kc, ks = _back_state(delta, c1, c2, gamma)
    th, w, kc, ks = float(th), float(w), float(kc), float(ks)
    k = math.hypot(kc, ks)
    phi = math.atan2(ks, kc) + delta
    d = abs(th - gamma - w) / SQRT2
    return BackstepSolution(c1, c2, float(delta), phi, k, th, w, d)


def solve_backstep(
    c1: float,
    c2: float,
    p: WalkerParams,
    prev_delta: Optional[float] = None,
    max_jump: float = MAX_BRANCH_JUMP,
) -> BackstepSolution:
    """Solve the backstep system for given modal coefficients.

    Without ``prev_delta`` the shortest admissible duration is returned; with
    it, the root nearest the previous one, which must lie within ``max_jump``.
    """
    roots = backstep_roots(c1, c2, p)
    if not roots:
        raise NoRoot(f"no admissible root for c1={c1:.6g}, c2={c2:.6g}")
    if prev_delta is None:
        return _solution_at(roots[0], c1, c2, p.gamma)
    best = min(roots, key=lambda r: abs(r - prev_delta))
    if abs(best - prev_delta) > max_jump:
        raise BranchJump(f"nearest root {best:.4g} is {abs(best - prev_delta):.3g} from the tracked branch at c2={c2:.6g}")
    return _solution_at(best, c1, c2, p.gamma)


# --------------------------------------------------------------------------
# PQ segment and deformation study


def pq_segment(samples: int, p: WalkerParams = WalkerParams(0.011)) -> List[Tuple[SectionPoint, float, float]]:
    """Uniform samples along PQ, largest ``c2`` first.

    Each entry is the pre-impact ``(theta1, dtheta1)`` on the contact surface
    together with its modal coefficients.
    """
    if samples < 2:
        raise ValueError("samples must be >= 2")
    out = []
    for c2 in np.linspace(C2_RANGE[1], C2_RANGE[0], samples):
        c1 = C1_INTERCEPT + C1_SLOPE * c2
        th1 = p.gamma + c1 + c2
        w1 = c1 - c2
        out.append((SectionPoint(float(th1), float(w1)), float(c1), float(c2)))
    return out


STUDY_COLUMNS = (
    "c2", "c1", "delta", "phi_unwrapped", "phi_mod", "k", "theta1_back", "dtheta1_back",
    "d_exact", "d_thin_approx", "rate_ratio", "status",
)


def deformation_study(p: WalkerParams = WalkerParams(0.011), samples: int = 200) -> List[dict]:
    """Continue the backstep solution along PQ from the largest ``c2`` downward.

    Returns one dict per sample with keys ``STUDY_COLUMNS``; rows where the
    branch is lost carry the error class in ``status`` and NaN values.
    """
    rows = []
    prev = None
    for _, c1, c2 in pq_segment(samples, p):
        row = {"c2": c2, "c1": c1}
        try:
            sol = solve_backstep(c1, c2, p, prev)
        except (NoRoot, BranchJump) as exc:
            row.update({k: math.nan for k in STUDY_COLUMNS[2:-1]})
            row["status"] = type(exc).__name__
            rows.append(row)
            continue
        prev = sol.delta
        row.update(
            delta=sol.delta,
            phi_unwrapped=sol.phi,
            phi_mod=sol.phi_mod,
            k=sol.k,
            theta1_back=sol.theta1_back,
            dtheta1_back=sol.dtheta1_back,
            d_exact=sol.d,
            d_thin_approx=SQRT2 * sol.theta1_back,
            rate_ratio=-sol.dtheta1_back / (sol.theta1_back + p.gamma / 3.0),
            status="ok",
        )
        rows.append(row)
    return rows


# --------------------------------------------------------------------------
# post-impact preimage and nonlinear comparison


def preimage_T_of(points: Sequence, tol: float = SECANT_MARGIN) -> np.ndarray:
    """Pre-impact ``(theta1, dtheta1)`` of post-impact section points."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if np.any(np.abs(2.0 * pts[:, 0]) >= math.pi / 2 - tol):
        raise ValueError("|2 theta1| too close to pi/2 for the impact inverse")
    return np.column_stack([-pts[:, 0], pts[:, 1] / np.cos(2.0 * pts[:, 0])])


def post_impact_of(points: Sequence) -> np.ndarray:
    """Inverse of :func:`preimage_T_of`, via :func:`apply_impact`."""
    out = []
    for th1, w1 in np.asarray(points, dtype=np.float64).reshape(-1, 2):
        s = apply_impact((th1, 2.0 * th1, w1, 0.0))
        out.append((s.theta1, s.dtheta1))
    return np.array(out)


def nonlinear_backstep(
    pre: SectionPoint,
    p: WalkerParams,
    delta_guess: float,
    cfg: IntegratorConfig = IntegratorConfig(),
    n_free: int = 400,
    require_contact: bool = True,
) -> Tuple[float, float, float]:
    """Backstep with the full equations from a pre-impact point.

    The swing rate at contact is the free unknown.  With ``require_contact``
    it is restricted to ``dtheta2 > 2 dtheta1`` so the state is a genuine
    foot contact; otherwise a window of the same width below that bound is
    searched too.  Each value whose backward orbit lands on the post-impact
    surface is a candidate, and the one whose duration is closest to
    ``delta_guess`` is returned as ``(theta1_back, dtheta1_back, delta)``.
    """
    th0, w0 = float(pre[0]), float(pre[1])
    if not th0 < 0.0:
        raise ValueError("pre-impact theta1 must be negative")
    lo = 2.0 * w0 + 1e-9 if require_contact else 2.0 * w0 - 3.0
    free = np.linspace(lo, 2.0 * w0 + 3.0, n_free if require_contact else 2 * n_free)
    roots = landing_roots(lambda w2: np.array([th0, 2.0 * th0, w0, w2]), free, p.gamma, cfg)
    if not roots:
        raise NoRoot(f"no backward landing from pre-impact point {tuple(pre)}")
    best = min(roots, key=lambda l: abs(-l.time - delta_guess))
    return float(best.state[0]), float(best.state[2]), float(-best.time)
