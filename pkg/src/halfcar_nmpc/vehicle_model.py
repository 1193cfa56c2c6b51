"""Half-car suspension model with active dampers.

Sign convention: heights are measured so that gravity enters the equations
of motion with ``+m g``.  At rest every spring carries a positive
deflection, e.g. ``x1 - w1 = f1 / k1 > 0``.  All quantities are SI base
units (N, m, s, kg); the damper bounds are 200..5000 N s/m.
"""

from __future__ import annotations

import math
from dataclasses import astuple, dataclass, fields
from typing import NamedTuple

import numpy as np

from . import _kernels
from .errors import InvalidInputError, ModelValidityError, NoEquilibriumError

U_MIN = 200.0
U_MAX = 5000.0


@dataclass(frozen=True)
class HalfCarParams:
    """Vehicle constants.  Defaults are the reference half car."""

    a: float = 1.0
    b: float = 1.0
    m1: float = 15.0
    m2: float = 15.0
    m3: float = 750.0
    inertia_I: float = 500.0
    k1: float = 2e5
    k2: float = 2e5
    d1: float = 2e2
    d2: float = 2e2
    k3: float = 1e5
    k4: float = 1e5
    g: float = 9.81

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if not math.isfinite(value):
                raise InvalidInputError(f"{f.name} must be finite, got {value}")
            if f.name != "g" and value <= 0:
                raise InvalidInputError(f"{f.name} must be positive, got {value}")

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=float)

    @property
    def total_mass(self) -> float:
        return self.m1 + self.m2 + self.m3

    @property
    def wheelbase(self) -> float:
        return self.a + self.b


@dataclass(frozen=True)
class HalfCarState:
    x1: float = 0.0
    x2: float = 0.0
    x3: float = 0.0
    x4: float = 0.0
    v1: float = 0.0
    v2: float = 0.0
    v3: float = 0.0
    v4: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=float)

    @classmethod
    def from_array(cls, values) -> "HalfCarState":
        values = np.asarray(values, dtype=float)
        if values.shape[-1] < 8:
            raise InvalidInputError("a half-car state has 8 components")
        return cls(*(float(v) for v in values[:8]))


@dataclass(frozen=True)
class DamperControl:
    u1: float
    u2: float

    def __post_init__(self):
        for name in ("u1", "u2"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise InvalidInputError(f"{name} must be finite")
            if not U_MIN <= value <= U_MAX:
                raise InvalidInputError(
                    f"{name}={value} outside damper range [{U_MIN}, {U_MAX}]"
                )

    def as_array(self) -> np.ndarray:
        return np.array([self.u1, self.u2])


@dataclass(frozen=True)
class RoadPoint:
    w1: float = 0.0
    w2: float = 0.0
    w1dot: float = 0.0
    w2dot: float = 0.0

    def as_row(self) -> np.ndarray:
        """Kernel row layout ``(w1, w1dot, w2, w2dot)``."""
        return np.array([self.w1, self.w1dot, self.w2, self.w2dot])


class ForceSet(NamedTuple):
    f1: float
    f2: float
    f3: float
    f4: float


def check_state(x: np.ndarray) -> None:
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("state contains non-finite values")
    if abs(x[3]) >= math.pi / 2:
        raise ModelValidityError(f"pitch angle {x[3]} outside (-pi/2, pi/2)")


def _unpack(s, u, r):
    x = s.as_array() if isinstance(s, HalfCarState) else np.asarray(s, dtype=float)
    check_state(x)
    uu = u.as_array() if isinstance(u, DamperControl) else np.asarray(u, dtype=float)
    rr = r.as_row() if isinstance(r, RoadPoint) else np.asarray(r, dtype=float)
    if not (np.all(np.isfinite(uu)) and np.all(np.isfinite(rr))):
        raise InvalidInputError("control or road contains non-finite values")
    return x, float(uu[0]), float(uu[1]), rr


def suspension_forces(p: HalfCarParams, s, u, r) -> ForceSet:
    """Wheel (f1, f2) and chassis (f3, f4) suspension forces in N."""
    x, u1, u2, rr = _unpack(s, u, r)
    return ForceSet(*_kernels.forces(p.as_array(), x, u1, u2, *rr))


def dynamics_rhs(p: HalfCarParams, s, u, r) -> np.ndarray:
    """Time derivative ``(v1..v4, a1..a4)`` of the car state."""
    x, u1, u2, rr = _unpack(s, u, r)
    out = np.empty(8)
    _kernels.state_rhs(p.as_array(), x, u1, u2, rr[0], rr[1], rr[2], rr[3], out)
    return out


def chassis_jerk(p: HalfCarParams, s, u, r) -> float:
    """Analytic third derivative of x3 (m/s^3) with the dampers held fixed.

    Only the chassis-side force rates enter, so no road acceleration is
    needed.
    """
    x, u1, u2, rr = _unpack(s, u, r)
    return float(_kernels.jerk(p.as_array(), x, u1, u2, rr[0], rr[1], rr[2], rr[3]))


def static_equilibrium(
    p: HalfCarParams, flat_road_height: float = 0.0, rear_road_height: float | None = None
) -> HalfCarState:
    """Rest state on a road of constant height.

    ``rear_road_height`` defaults to the front height (flat road).
    """
    w1 = float(flat_road_height)
    w2 = w1 if rear_road_height is None else float(rear_road_height)
    if not (math.isfinite(w1) and math.isfinite(w2)):
        raise InvalidInputError("road height must be finite")
    # chassis force and torque balance fix the chassis spring loads
    f3 = p.a * p.m3 * p.g / (p.a + p.b)
    f4 = p.b * p.m3 * p.g / (p.a + p.b)
    f1 = p.m1 * p.g + f3
    f2 = p.m2 * p.g + f4
    x1 = w1 + f1 / p.k1
    x2 = w2 + f2 / p.k2
    lo = x1 + f3 / p.k3  # x3 - b sin(x4)
    hi = x2 + f4 / p.k4  # x3 + a sin(x4)
    sin4 = (hi - lo) / (p.a + p.b)
    if not math.isfinite(sin4) or abs(sin4) >= 1.0:
        raise NoEquilibriumError(f"no admissible pitch angle (sin x4 = {sin4})")
    x4 = math.asin(sin4)
    x3 = lo + p.b * sin4
    return HalfCarState(x1=x1, x2=x2, x3=x3, x4=x4)
