"""Walker parameters, phase-space types and the swing-phase vector field.

The model is the point-foot compass walker in the limit of vanishing foot
mass, written in dimensionless time.  State layout everywhere in the package
is ``(theta1, theta2, dtheta1, dtheta2)``: stance angle from the slope
normal, inter-leg angle, and their rates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal, NamedTuple

import numpy as np
from numba import njit

GAMMA_MAX = 0.1


class ParameterError(ValueError):
    """Raised for parameters outside the supported window."""


@dataclass(frozen=True)
class WalkerParams:
    gamma: float

    def __post_init__(self):
        if not (math.isfinite(self.gamma) and 0.0 <= self.gamma < GAMMA_MAX):
            raise ParameterError(f"gamma must lie in [0, {GAMMA_MAX}), got {self.gamma!r}")


class FullState(NamedTuple):
    theta1: float
    theta2: float
    dtheta1: float
    dtheta2: float

    def as_array(self) -> np.ndarray:
        return np.array(self, dtype=np.float64)

    @classmethod
    def from_array(cls, y) -> "FullState":
        return cls(float(y[0]), float(y[1]), float(y[2]), float(y[3]))


class SectionPoint(NamedTuple):
    """Coordinates ``(theta1, dtheta1)`` of a post-impact state."""

    theta1: float
    dtheta1: float


@njit(cache=True)
def rhs(y, gamma, out):
    """Swing-phase right-hand side written into ``out``."""
    th1 = y[0]
    th2 = y[1]
    w1 = y[2]
    acc1 = math.sin(th1 - gamma)
    out[0] = w1
    out[1] = y[3]
    out[2] = acc1
    out[3] = -(math.cos(th2) - 1.0) * acc1 + w1 * w1 * math.sin(th2) - math.sin(th2 - th1 + gamma)


def vector_field(s, p: WalkerParams) -> FullState:
    y = np.asarray(s, dtype=np.float64)
    out = np.empty(4)
    rhs(y, p.gamma, out)
    return FullState.from_array(out)


def stance_energy(s, p: WalkerParams) -> float:
    """First integral of the stance-leg equation, equal to 1 on the separatrix."""
    return 0.5 * s[2] * s[2] + math.cos(s[0] - p.gamma)


def jacobian(s, p: WalkerParams) -> np.ndarray:
    """Analytic Jacobian of the vector field at state ``s``."""
    th1, th2, w1, _ = (float(v) for v in s)
    acc1 = math.sin(th1 - p.gamma)
    c1 = math.cos(th1 - p.gamma)
    c_sw = math.cos(th2 - th1 + p.gamma)
    jac = np.zeros((4, 4))
    jac[0, 2] = 1.0
    jac[1, 3] = 1.0
    jac[2, 0] = c1
    jac[3, 0] = -(math.cos(th2) - 1.0) * c1 + c_sw
    jac[3, 1] = math.sin(th2) * acc1 + w1 * w1 * math.cos(th2) - c_sw
    jac[3, 2] = 2.0 * w1 * math.sin(th2)
    return jac


def equilibrium_jacobian(p: WalkerParams) -> np.ndarray:
    return jacobian((p.gamma, 0.0, 0.0, 0.0), p)


def equilibrium_jacobian_spectrum(p: WalkerParams) -> np.ndarray:
    """Eigenvalues of the upright equilibrium, sorted by real then imaginary part."""
    w = np.linalg.eigvals(equilibrium_jacobian(p))
    return w[np.lexsort((w.imag, w.real))]


def numerical_jacobian(s, p: WalkerParams, h: float = 1e-6) -> np.ndarray:
    y = np.asarray(s, dtype=np.float64)
    jac = np.empty((4, 4))
    fp = np.empty(4)
    fm = np.empty(4)
    for j in range(4):
        e = np.zeros(4)
        e[j] = h
        rhs(y + e, p.gamma, fp)
        rhs(y - e, p.gamma, fm)
        jac[:, j] = (fp - fm) / (2.0 * h)
    return jac


def linear_subspace_distance(s, p: WalkerParams, which: Literal["cs", "cu"]) -> float:
    """Distance in the ``(theta1, dtheta1)`` plane to the linear stable/unstable line.

    ``cs`` is the line ``theta1 - gamma = -dtheta1``; ``cu`` is
    ``theta1 - gamma = dtheta1``.
    """
    x = s[0] - p.gamma
    v = s[2]
    if which == "cs":
        return abs(x + v) / math.sqrt(2.0)
    if which == "cu":
        return abs(x - v) / math.sqrt(2.0)
    raise ValueError(f"which must be 'cs' or 'cu', got {which!r}")
