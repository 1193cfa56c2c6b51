"""Fixed-step RK4 integration under zero-order-hold damper settings.

The ODE is augmented with the two stage-cost integrands so that the costs
are integrated with the same scheme (and order) as the car states.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _kernels
from .errors import InvalidInputError, ModelValidityError
from .ocp import nominal_forces
from .vehicle_model import DamperControl, HalfCarParams, HalfCarState, check_state


@dataclass(frozen=True)
class IntegratorConfig:
    # 10 substeps (h = 0.01 s) leave RK4 unstable for the u = 5000 wheel modes
    substeps_per_sample: int = 20
    sampling_period_T: float = 0.1

    def __post_init__(self):
        if self.substeps_per_sample < 1:
            raise InvalidInputError("substeps_per_sample must be >= 1")
        if not self.sampling_period_T > 0:
            raise InvalidInputError("sampling_period_T must be positive")

    @property
    def step(self) -> float:
        return self.sampling_period_T / self.substeps_per_sample

    def refined(self, factor: int) -> "IntegratorConfig":
        return IntegratorConfig(self.substeps_per_sample * factor, self.sampling_period_T)


@dataclass(frozen=True)
class AugmentedState:
    car: HalfCarState
    q_R: float = 0.0
    q_A: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.car.as_array(), [self.q_R, self.q_A]])

    @classmethod
    def from_array(cls, values) -> "AugmentedState":
        values = np.asarray(values, dtype=float)
        return cls(HalfCarState.from_array(values[:8]), float(values[8]), float(values[9]))


def road_table(road, t0: float, period: float, nsub: int) -> np.ndarray:
    """Road rows ``(w1, w1dot, w2, w2dot)`` at the RK4 nodes of one interval.

    ``road`` is either a ``(front, rear)`` pair of road signals or any object
    with a ``table(t0, period, nsub)`` method.
    """
    if hasattr(road, "table"):
        return road.table(t0, period, nsub)
    front, rear = road
    spacing = period / (2 * nsub)
    w1, w1d = front.sample_grid(t0, spacing, 2 * nsub + 1)
    w2, w2d = rear.sample_grid(t0, spacing, 2 * nsub + 1)
    return np.column_stack([w1, w1d, w2, w2d])


def _as_aug(s0) -> np.ndarray:
    if isinstance(s0, AugmentedState):
        x = s0.as_array()
    elif isinstance(s0, HalfCarState):
        x = np.concatenate([s0.as_array(), [0.0, 0.0]])
    else:
        x = np.asarray(s0, dtype=float)
        if x.shape == (8,):
            x = np.concatenate([x, [0.0, 0.0]])
    if x.shape != (10,):
        raise InvalidInputError("augmented state must have 10 components")
    return x


def _controls(u) -> tuple[float, float]:
    if isinstance(u, DamperControl):
        return u.u1, u.u2
    u1, u2 = (float(v) for v in u)
    return u1, u2


def integrate_interval(
    cfg: IntegratorConfig, p: HalfCarParams, x0: np.ndarray, u, table: np.ndarray,
    dense: bool = False,
) -> np.ndarray:
    """Array-level single-interval integration (no dataclass round trips)."""
    check_state(x0)
    F = nominal_forces(p)
    u1, u2 = _controls(u)
    kernel = _kernels.rk4_interval_dense if dense else _kernels.rk4_interval
    out = kernel(p.as_array(), x0, u1, u2, table, cfg.step, F.F1, F.F2)
    last = out[-1] if dense else out
    if not np.all(np.isfinite(last)):
        raise InvalidInputError("integration produced non-finite values")
    if abs(last[3]) >= math.pi / 2:
        raise ModelValidityError(f"pitch angle reached {last[3]} rad")
    return out


def step_sample(
    cfg: IntegratorConfig, p: HalfCarParams, s0, u, road, t0: float
) -> AugmentedState:
    """Advance one sampling interval ``[t0, t0 + T]`` with ``u`` held."""
    x0 = _as_aug(s0)
    table = road_table(road, t0, cfg.sampling_period_T, cfg.substeps_per_sample)
    return AugmentedState.from_array(integrate_interval(cfg, p, x0, u, table))


def rollout(
    cfg: IntegratorConfig, p: HalfCarParams, s0, controls: Sequence, road, t0: float
) -> list[AugmentedState]:
    """Propagate over ``len(controls)`` consecutive intervals."""
    x = _as_aug(s0)
    states = [AugmentedState.from_array(x)]
    for k, u in enumerate(controls):
        tk = t0 + k * cfg.sampling_period_T
        table = road_table(road, tk, cfg.sampling_period_T, cfg.substeps_per_sample)
        x = integrate_interval(cfg, p, x, u, table)
        states.append(AugmentedState.from_array(x))
    return states
