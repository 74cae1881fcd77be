"""Adaptive integration of the swing phase with foot-contact event location.

The stepper is the eighth-order Dormand-Prince pair (DOP853, coefficients
taken from SciPy) with SciPy's 5th/3rd-order blended error estimate, compiled
with numba so that raster sweeps can call it per cell.  Event roots are
refined by re-taking a single step of the located length from the start of
the bracketing step, so the refined state carries the full order of the
method rather than that of an interpolant.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from numba import njit
from scipy.integrate._ivp import dop853_coefficients as _dop

from pdwalk.model import FullState, WalkerParams, rhs

_NS = _dop.N_STAGES
_A = np.ascontiguousarray(_dop.A[:_NS, :_NS])
_B = np.ascontiguousarray(_dop.B)
_C = np.ascontiguousarray(_dop.C[:_NS])
_E3 = np.ascontiguousarray(_dop.E3)
_E5 = np.ascontiguousarray(_dop.E5)

_SAFETY = 0.9
_MIN_FACTOR = 0.2
_MAX_FACTOR = 10.0
_ERR_EXP = -1.0 / 8.0

EVENT_TOL = 1e-12
MIN_EVENT_TIME = 1e-9

# kernel status codes
CONTACT = 0
OVERTURN = 1
TIME_BUDGET = 2
BLOWUP = 3


class FallReason(enum.Enum):
    STANCE_OVERTURN = "StanceOverturn"
    TIME_BUDGET = "TimeBudget"
    NUMERICAL_BLOWUP = "NumericalBlowup"


_FALL_BY_CODE = {
    OVERTURN: FallReason.STANCE_OVERTURN,
    TIME_BUDGET: FallReason.TIME_BUDGET,
    BLOWUP: FallReason.NUMERICAL_BLOWUP,
}


@dataclass(frozen=True)
class IntegratorConfig:
    rel_tol: float = 1e-10
    abs_tol: float = 1e-10
    max_step: float = 0.25
    t_max: float = 50.0
    theta1_fall_limit: float = math.pi / 2

    def __post_init__(self):
        for name in ("rel_tol", "abs_tol"):
            v = getattr(self, name)
            if not 1e-14 <= v <= 1e-4:
                raise ValueError(f"{name} must lie in [1e-14, 1e-4], got {v!r}")
        if not self.max_step > 0:
            raise ValueError("max_step must be positive")
        if not self.t_max > 0:
            raise ValueError("t_max must be positive")
        if not 0 < self.theta1_fall_limit <= math.pi / 2:
            raise ValueError("theta1_fall_limit must lie in (0, pi/2]")

    def tightened(self, factor: float = 10.0) -> "IntegratorConfig":
        return IntegratorConfig(
            rel_tol=max(self.rel_tol / factor, 1e-14),
            abs_tol=max(self.abs_tol / factor, 1e-14),
            max_step=self.max_step,
            t_max=self.t_max,
            theta1_fall_limit=self.theta1_fall_limit,
        )

    def as_dict(self) -> dict:
        return {
            "rel_tol": self.rel_tol,
            "abs_tol": self.abs_tol,
            "max_step": self.max_step,
            "t_max": self.t_max,
            "theta1_fall_limit": self.theta1_fall_limit,
        }


@dataclass
class SwingResult:
    kind: str  # "Contact" or "Fall"
    duration: float
    pre_impact: Optional[FullState] = None
    fall_reason: Optional[FallReason] = None
    times: Optional[np.ndarray] = None
    states: Optional[np.ndarray] = None

    @property
    def is_contact(self) -> bool:
        return self.kind == "Contact"


# --------------------------------------------------------------------------
# compiled kernels


@njit(cache=True)
def _rk_step(y, f, h, gamma, K, y_new):
    """One DOP853 step of signed length ``h``; fills stages ``K`` and ``y_new``."""
    n = y.shape[0]
    tmp = np.empty(n)
    for i in range(n):
        K[0, i] = f[i]
    for s in range(1, _NS):
        for i in range(n):
            acc = 0.0
            for j in range(s):
                acc += _A[s, j] * K[j, i]
            tmp[i] = y[i] + h * acc
        rhs(tmp, gamma, K[s])
    for i in range(n):
        acc = 0.0
        for j in range(_NS):
            acc += _B[j] * K[j, i]
        y_new[i] = y[i] + h * acc
    rhs(y_new, gamma, K[_NS])


@njit(cache=True)
def _error_norm(K, h, y, y_new, rtol, atol):
    n = y.shape[0]
    e5 = 0.0
    e3 = 0.0
    for i in range(n):
        sc = atol + max(abs(y[i]), abs(y_new[i])) * rtol
        a5 = 0.0
        a3 = 0.0
        for j in range(_NS + 1):
            a5 += _E5[j] * K[j, i]
            a3 += _E3[j] * K[j, i]
        a5 /= sc
        a3 /= sc
        e5 += a5 * a5
        e3 += a3 * a3
    if e5 == 0.0 and e3 == 0.0:
        return 0.0
    return abs(h) * e5 / math.sqrt((e5 + 0.01 * e3) * n)


@njit(cache=True)
def _advance(y, f, h_abs, direction, gamma, rtol, atol, max_step, K, y_new):
    """Take one accepted adaptive step.

    Returns ``(h_signed, h_abs_next, ok)``; ``y_new`` holds the new state and
    ``K[_NS]`` its derivative.
    """
    if h_abs > max_step:
        h_abs = max_step
    rejected = False
    while True:
        if h_abs < 1e-14:
            return 0.0, h_abs, False
        h = direction * h_abs
        _rk_step(y, f, h, gamma, K, y_new)
        finite = True
        for i in range(y.shape[0]):
            if not math.isfinite(y_new[i]):
                finite = False
        if finite:
            err = _error_norm(K, h, y, y_new, rtol, atol)
        else:
            err = math.inf
        if err < 1.0:
            if err == 0.0:
                factor = _MAX_FACTOR
            else:
                factor = min(_MAX_FACTOR, _SAFETY * err**_ERR_EXP)
            if rejected:
                factor = min(1.0, factor)
            return h, h_abs * factor, True
        if math.isfinite(err):
            h_abs *= max(_MIN_FACTOR, _SAFETY * err**_ERR_EXP)
        else:
            h_abs *= _MIN_FACTOR
        rejected = True


@njit(cache=True)
def _guard(y):
    return 2.0 * y[0] - y[1]


@njit(cache=True)
def _refine_root(y, f, h, g0, g1, gamma, K, out):
    """Illinois regula falsi on tau -> g(step(y, tau)), tau between 0 and ``h``.

    Returns the signed root time; ``out`` holds the state there.
    """
    a = 0.0
    b = h
    ga = g0
    gb = g1
    side = 0
    tau = b
    for _ in range(200):
        if gb != ga:
            tau = (a * gb - b * ga) / (gb - ga)
        else:
            tau = 0.5 * (a + b)
        if not (min(a, b) < tau < max(a, b)):
            tau = 0.5 * (a + b)
        _rk_step(y, f, tau, gamma, K, out)
        gt = _guard(out)
        if abs(gt) <= EVENT_TOL or abs(b - a) < 1e-15:
            return tau
        if (gt > 0.0) == (gb > 0.0):
            b = tau
            gb = gt
            if side == 1:
                ga *= 0.5
            side = 1
        else:
            a = tau
            ga = gt
            if side == -1:
                gb *= 0.5
            side = -1
    return tau


@njit(cache=True)
def swing_kernel(y0, gamma, rtol, atol, max_step, t_max, fall_limit, traj_t, traj_y):
    """Integrate forward until a valid foot contact or a fall.

    Returns ``(status, t, y_end, n_samples)``.  Accepted-step samples are
    written into ``traj_t``/``traj_y`` while capacity lasts.
    """
    n = 4
    K = np.empty((_NS + 1, n))
    y = y0.copy()
    f = np.empty(n)
    y_new = np.empty(n)
    y_root = np.empty(n)
    rhs(y, gamma, f)
    cap = traj_t.shape[0]
    ns = 0
    if cap > 0:
        traj_t[0] = 0.0
        traj_y[0, :] = y
        ns = 1
    t = 0.0
    h_abs = min(0.01, max_step)
    for i in range(n):
        if not math.isfinite(y[i]):
            return BLOWUP, t, y, ns
    while True:
        h, h_next, ok = _advance(y, f, h_abs, 1.0, gamma, rtol, atol, max_step, K, y_new)
        if not ok:
            return BLOWUP, t, y, ns
        g0 = _guard(y)
        g1 = _guard(y_new)
        # contact requires g decreasing through zero
        if g0 > 0.0 and g1 <= 0.0:
            tau = _refine_root(y, f, h, g0, g1, gamma, K, y_root)
            if t + tau >= MIN_EVENT_TIME and y_root[0] < 0.0 and 2.0 * y_root[2] - y_root[3] < 0.0:
                if ns < cap:
                    traj_t[ns] = t + tau
                    traj_y[ns, :] = y_root
                    ns += 1
                return CONTACT, t + tau, y_root, ns
            # the refinement overwrote the stages; rebuild the accepted step
            _rk_step(y, f, h, gamma, K, y_new)
        t += h
        for i in range(n):
            y[i] = y_new[i]
            f[i] = K[_NS, i]
        h_abs = h_next
        if ns < cap:
            traj_t[ns] = t
            traj_y[ns, :] = y
            ns += 1
        if abs(y[0]) >= fall_limit:
            return OVERTURN, t, y, ns
        if t >= t_max:
            return TIME_BUDGET, t, y, ns


@njit(cache=True)
def section_crossings_backward(y0, gamma, rtol, atol, max_step, t_max, fall_limit, max_cross, out_t, out_y):
    """Integrate backward, recording every crossing of ``theta2 = 2 theta1``.

    Returns the number of crossings recorded.  Integration stops at the
    stance fall limit, the time budget, or once ``max_cross`` crossings exist.
    """
    n = 4
    K = np.empty((_NS + 1, n))
    y = y0.copy()
    f = np.empty(n)
    y_new = np.empty(n)
    y_root = np.empty(n)
    rhs(y, gamma, f)
    t = 0.0
    h_abs = min(0.01, max_step)
    nc = 0
    while nc < max_cross:
        h, h_next, ok = _advance(y, f, h_abs, -1.0, gamma, rtol, atol, max_step, K, y_new)
        if not ok:
            return nc
        g0 = _guard(y)
        g1 = _guard(y_new)
        if (g0 > 0.0 and g1 <= 0.0) or (g0 < 0.0 and g1 >= 0.0):
            tau = _refine_root(y, f, h, g0, g1, gamma, K, y_root)
            if -(t + tau) >= MIN_EVENT_TIME:
                out_t[nc] = t + tau
                out_y[nc, :] = y_root
                nc += 1
            _rk_step(y, f, h, gamma, K, y_new)
        t += h
        for i in range(n):
            y[i] = y_new[i]
            f[i] = K[_NS, i]
        h_abs = h_next
        if abs(y[0]) >= fall_limit or -t >= t_max:
            return nc
    return nc


# --------------------------------------------------------------------------
# python surface


def integrate_swing(
    s0, p: WalkerParams, cfg: IntegratorConfig = IntegratorConfig(), record: bool = False
) -> SwingResult:
    y0 = np.asarray(s0, dtype=np.float64).copy()
    cap = 200_000 if record else 0
    traj_t = np.empty(cap)
    traj_y = np.empty((cap, 4))
    status, t, y_end, ns = swing_kernel(
        y0, p.gamma, cfg.rel_tol, cfg.abs_tol, cfg.max_step, cfg.t_max, cfg.theta1_fall_limit, traj_t, traj_y
    )
    times = traj_t[:ns].copy() if record else None
    states = traj_y[:ns].copy() if record else None
    if status == CONTACT:
        return SwingResult("Contact", t, pre_impact=FullState.from_array(y_end), times=times, states=states)
    return SwingResult("Fall", t, fall_reason=_FALL_BY_CODE[status], times=times, states=states)


@dataclass
class BackwardTrajectory:
    times: np.ndarray  # non-positive, decreasing
    states: np.ndarray
    stopped: bool  # True if the stop predicate fired
    budget_exhausted: bool


def integrate_swing_backward(
    s0,
    p: WalkerParams,
    cfg: IntegratorConfig = IntegratorConfig(),
    stop: Optional[Callable[[np.ndarray], bool]] = None,
    t_budget: Optional[float] = None,
) -> BackwardTrajectory:
    """Integrate in reversed time until ``stop(state)`` becomes true.

    When the predicate switches from false to true across an accepted step,
    the switching time is bisected to 1e-12 and the last sample is the first
    state where ``stop`` holds.
    """
    budget = cfg.t_max if t_budget is None else t_budget
    y = np.asarray(s0, dtype=np.float64).copy()
    f = np.empty(4)
    rhs(y, p.gamma, f)
    K = np.empty((_NS + 1, 4))
    y_new = np.empty(4)
    t = 0.0
    h_abs = min(0.01, cfg.max_step)
    times = [0.0]
    states = [y.copy()]
    while -t < budget:
        h, h_next, ok = _advance(y, f, h_abs, -1.0, p.gamma, cfg.rel_tol, cfg.abs_tol, cfg.max_step, K, y_new)
        if not ok:
            break
        if stop is not None and stop(y_new):
            lo, hi = 0.0, h
            y_mid = np.empty(4)
            while abs(hi - lo) > EVENT_TOL:
                mid = 0.5 * (lo + hi)
                _rk_step(y, f, mid, p.gamma, K, y_mid)
                if stop(y_mid):
                    hi = mid
                else:
                    lo = mid
            _rk_step(y, f, hi, p.gamma, K, y_mid)
            times.append(t + hi)
            states.append(y_mid.copy())
            return BackwardTrajectory(np.array(times), np.array(states), True, False)
        t += h
        y = y_new.copy()
        f = K[_NS].copy()
        h_abs = h_next
        times.append(t)
        states.append(y.copy())
        if not np.all(np.isfinite(y)):
            break
    return BackwardTrajectory(np.array(times), np.array(states), False, True)


def on_post_impact_surface(tol: float = 1e-9) -> Callable[[np.ndarray], bool]:
    """Predicate for reaching ``theta2 <= 2 theta1`` with ``theta1 > 0`` going backward.

    Suitable as the ``stop`` argument when the backward orbit approaches the
    post-impact surface from the side ``theta2 > 2 theta1``.
    """

    def stop(y: np.ndarray) -> bool:
        return y[0] > 0.0 and 2.0 * y[0] - y[1] >= -tol

    return stop
