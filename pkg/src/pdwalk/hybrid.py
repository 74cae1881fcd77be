"""Impact map, post-impact section and the step (Poincare) map."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from numba import njit

from pdwalk.integrator import (
    CONTACT,
    FallReason,
    IntegratorConfig,
    _FALL_BY_CODE,
    integrate_swing,
    swing_kernel,
)
from pdwalk.model import FullState, SectionPoint, WalkerParams

IMPACT_TOL = 1e-9


class ImpactError(ValueError):
    """Pre-impact state is not on the contact surface."""


class SectionError(ValueError):
    """Section coordinates outside the post-impact surface."""


def apply_impact(pre, tol: float = IMPACT_TOL) -> FullState:
    """Inelastic foot contact followed by leg exchange.

    The result depends only on ``theta1`` and ``dtheta1`` of the pre-impact
    state.
    """
    th1, th2, w1, _ = (float(v) for v in pre)
    if abs(2.0 * th1 - th2) > tol:
        raise ImpactError(f"|2*theta1 - theta2| = {abs(2.0 * th1 - th2):.3g} exceeds {tol:g}")
    c = math.cos(2.0 * th1)
    w1_post = w1 * c
    return FullState(-th1, -2.0 * th1, w1_post, w1_post * (1.0 - c))


def embed_section(q) -> FullState:
    th1, w1 = float(q[0]), float(q[1])
    if not th1 > 0.0:
        raise SectionError(f"post-impact theta1 must be positive, got {th1!r}")
    return FullState(th1, 2.0 * th1, w1, w1 * (1.0 - math.cos(2.0 * th1)))


@dataclass
class StepOutcome:
    kind: str  # "Stepped" or "Fell"
    duration: float
    next: Optional[SectionPoint] = None
    pre_impact: Optional[FullState] = None
    fall_reason: Optional[FallReason] = None

    @property
    def stepped(self) -> bool:
        return self.kind == "Stepped"


def step(q, p: WalkerParams, cfg: IntegratorConfig = IntegratorConfig()) -> StepOutcome:
    s0 = embed_section(q)
    res = integrate_swing(s0, p, cfg)
    if not res.is_contact:
        return StepOutcome("Fell", res.duration, fall_reason=res.fall_reason)
    post = apply_impact(res.pre_impact)
    return StepOutcome("Stepped", res.duration, next=SectionPoint(post.theta1, post.dtheta1), pre_impact=res.pre_impact)


@dataclass
class Orbit:
    points: List[SectionPoint]
    durations: List[float]
    survived: int
    fall_reason: Optional[FallReason] = None

    def as_array(self) -> np.ndarray:
        return np.array(self.points, dtype=np.float64).reshape(-1, 2)


def iterate(q0, p: WalkerParams, cfg: IntegratorConfig = IntegratorConfig(), n_max: int = 1) -> Orbit:
    """Apply ``step`` repeatedly, stopping at the first fall."""
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    embed_section(q0)
    pts = np.empty((n_max + 1, 2))
    durs = np.empty(n_max)
    n, code = orbit_kernel(
        float(q0[0]), float(q0[1]), p.gamma, n_max,
        cfg.rel_tol, cfg.abs_tol, cfg.max_step, cfg.t_max, cfg.theta1_fall_limit, pts, durs,
    )
    points = [SectionPoint(float(a), float(b)) for a, b in pts[: n + 1]]
    reason = None if code == CONTACT else _FALL_BY_CODE[code]
    return Orbit(points, [float(d) for d in durs[:n]], int(n), reason)


# --------------------------------------------------------------------------
# compiled step map

@njit(cache=True)
def step_kernel(th1, w1, gamma, rtol, atol, max_step, t_max, fall_limit):
    """Compiled step map on section coordinates.

    Returns ``(status, theta1_next, dtheta1_next, duration)``.
    """
    y0 = np.empty(4)
    y0[0] = th1
    y0[1] = 2.0 * th1
    y0[2] = w1
    y0[3] = w1 * (1.0 - math.cos(2.0 * th1))
    status, t, y, _ = swing_kernel(
        y0, gamma, rtol, atol, max_step, t_max, fall_limit, np.empty(0), np.empty((0, 4))
    )
    if status != CONTACT:
        return status, math.nan, math.nan, t
    c = math.cos(2.0 * y[0])
    return CONTACT, -y[0], y[2] * c, t


@njit(cache=True)
def survival_kernel(th1, w1, gamma, n_max, rtol, atol, max_step, t_max, fall_limit):
    """Number of steps completed from a section point, capped at ``n_max``."""
    if not th1 > 0.0:
        return 0
    for k in range(n_max):
        status, th1, w1, _ = step_kernel(th1, w1, gamma, rtol, atol, max_step, t_max, fall_limit)
        if status != CONTACT or not th1 > 0.0:
            return k
    return n_max


@njit(cache=True)
def orbit_kernel(th1, w1, gamma, n_max, rtol, atol, max_step, t_max, fall_limit, pts, durs):
    pts[0, 0] = th1
    pts[0, 1] = w1
    for k in range(n_max):
        status, th1, w1, dur = step_kernel(th1, w1, gamma, rtol, atol, max_step, t_max, fall_limit)
        if status != CONTACT:
            return k, status
        durs[k] = dur
        pts[k + 1, 0] = th1
        pts[k + 1, 1] = w1
    return n_max, CONTACT


def step_map(q, p: WalkerParams, cfg: IntegratorConfig, n: int = 1):
    """``n``-fold step map on section coordinates; ``None`` if the walker falls."""
    th1, w1 = float(q[0]), float(q[1])
    for _ in range(n):
        status, th1, w1, _ = step_kernel(
            th1, w1, p.gamma, cfg.rel_tol, cfg.abs_tol, cfg.max_step, cfg.t_max, cfg.theta1_fall_limit
        )
        if status != CONTACT:
            return None
    return np.array([th1, w1])
