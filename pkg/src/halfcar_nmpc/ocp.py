"""Finite-horizon optimal control problem for the active dampers.

Decision vector: ``z = (u1(0), u2(0), u1(1), u2(1), ...)``, held constant on
each sampling interval.  Cost: the weighted sum over the horizon of the
handling term (squared relative deviation of the wheel forces from the
static axle loads) and the comfort term (squared chassis jerk times m3).

The road enters as heights and rates of both wheels at the ``N + 1`` grid
times of the horizon, laid out per grid point as ``(w1, w1dot, w2, w2dot)``.
Between grid points the height is the cubic Hermite interpolant of those
values, so the rate seen by the model is continuous.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import _kernels
from .errors import InvalidInputError
from .vehicle_model import U_MAX, U_MIN, HalfCarParams, HalfCarState, check_state

_EPS = np.finfo(float).eps


@dataclass(frozen=True)
class OcpConfig:
    horizon_N: int = 5
    mu_R: float = 1.0
    mu_A: float = 1.0
    u_min: float = U_MIN
    u_max: float = U_MAX
    sampling_period_T: float = 0.1
    substeps: int = 20

    def __post_init__(self):
        if self.horizon_N < 1:
            raise InvalidInputError("horizon_N must be >= 1")
        if self.mu_R < 0 or self.mu_A < 0:
            raise InvalidInputError("cost weights must be non-negative")
        if not self.u_min < self.u_max:
            raise InvalidInputError("control bounds must satisfy u_min < u_max")
        if not self.sampling_period_T > 0 or self.substeps < 1:
            raise InvalidInputError("need T > 0 and at least one substep")

    @property
    def n_controls(self) -> int:
        return 2 * self.horizon_N

    @property
    def n_road(self) -> int:
        return 4 * (self.horizon_N + 1)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        n = self.n_controls
        return np.full(n, float(self.u_min)), np.full(n, float(self.u_max))


@dataclass(frozen=True)
class NominalForces:
    F1: float
    F2: float


def nominal_forces(p: HalfCarParams) -> NominalForces:
    """Static axle loads used to normalise the handling cost."""
    total = p.g * (p.m1 + p.m2 + p.m3)
    return NominalForces(p.a * total / (p.a + p.b), p.b * total / (p.a + p.b))


def _hermite_basis(nsub: int) -> tuple[np.ndarray, np.ndarray]:
    tau = np.linspace(0.0, 1.0, 2 * nsub + 1)
    t2, t3 = tau**2, tau**3
    value = np.stack([2 * t3 - 3 * t2 + 1, t3 - 2 * t2 + tau, -2 * t3 + 3 * t2, t3 - t2])
    slope = np.stack([6 * t2 - 6 * tau, 3 * t2 - 4 * tau + 1, -6 * t2 + 6 * tau, 3 * t2 - 2 * tau])
    return value, slope


def hermite_tables(w: np.ndarray, period: float, nsub: int) -> np.ndarray:
    """Road rows at every RK4 node of every horizon interval.

    Returns shape ``(N, 2 * nsub + 1, 4)``.
    """
    grid = np.asarray(w, dtype=float).reshape(-1, 4)
    value, slope = _hermite_basis(nsub)
    out = np.empty((grid.shape[0] - 1, value.shape[1], 4))
    for height, rate in ((0, 1), (2, 3)):
        h0, h1 = grid[:-1, height, None], grid[1:, height, None]
        r0, r1 = period * grid[:-1, rate, None], period * grid[1:, rate, None]
        out[:, :, height] = h0 * value[0] + r0 * value[1] + h1 * value[2] + r1 * value[3]
        out[:, :, rate] = (h0 * slope[0] + r0 * slope[1] + h1 * slope[2] + r1 * slope[3]) / period
    return out


@dataclass(frozen=True)
class HermiteRoad:
    """Horizon road parameterisation usable as a simulation road source."""

    w: np.ndarray
    t0: float
    period: float

    def table(self, t0: float, period: float, nsub: int) -> np.ndarray:
        k = int(round((t0 - self.t0) / self.period))
        if abs(period - self.period) > 1e-12 or abs(t0 - self.t0 - k * self.period) > 1e-9:
            raise InvalidInputError("Hermite road queried off its horizon grid")
        grid = np.asarray(self.w).reshape(-1, 4)
        if not 0 <= k < grid.shape[0] - 1:
            raise InvalidInputError("Hermite road queried outside the horizon")
        return hermite_tables(grid[k : k + 2].ravel(), period, nsub)[0]


def disturbance_from_signals(front, rear, t0: float, cfg: OcpConfig) -> np.ndarray:
    """Sample both road signals at the horizon grid starting at ``t0``."""
    t = t0 + cfg.sampling_period_T * np.arange(cfg.horizon_N + 1)
    w1, w1d = front.evaluate(t)
    w2, w2d = rear.evaluate(t)
    return np.column_stack([w1, w1d, w2, w2d]).ravel()


def _state_array(x0) -> np.ndarray:
    x = x0.as_array() if isinstance(x0, HalfCarState) else np.asarray(x0, dtype=float)
    check_state(x)
    return x


@dataclass
class HorizonOcp:
    """One instance of the horizon problem, parameterised by (x0, w).

    Implements the box-problem protocol of ``nlp_solver`` (``lower``,
    ``upper``, ``fun``, ``grad``, ``fun_and_grad``) and the parametric
    protocol of ``sensitivity`` (``params``, ``n_state``, ``grad_at``,
    ``param_steps``).
    """

    cfg: OcpConfig
    vehicle: HalfCarParams
    x0: np.ndarray
    w: np.ndarray
    gradient_method: str = "complex"
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.x0 = _state_array(self.x0)
        self.w = np.asarray(self.w, dtype=float).ravel()
        if self.w.size != self.cfg.n_road:
            raise InvalidInputError(
                f"road parameterisation needs {self.cfg.n_road} values, got {self.w.size}"
            )
        if not np.all(np.isfinite(self.w)):
            raise InvalidInputError("road parameterisation contains non-finite values")
        self.lower, self.upper = self.cfg.bounds()
        self._p = self.vehicle.as_array()
        F = nominal_forces(self.vehicle)
        self._F = (F.F1, F.F2)
        self._h = self.cfg.sampling_period_T / self.cfg.substeps
        self._tables = self._tables_for(self.w)

    def _tables_for(self, w):
        return hermite_tables(w, self.cfg.sampling_period_T, self.cfg.substeps)

    def _cost(self, x0, z, tables) -> float:
        return _kernels.horizon_cost(
            self._p, x0, np.asarray(z, dtype=float), tables, self._h, *self._F,
            self.cfg.mu_R, self.cfg.mu_A,
        )

    def _cost_and_grad(self, x0, z, tables):
        z = np.asarray(z, dtype=float)
        if self.gradient_method == "complex":
            return _kernels.horizon_cost_and_grad(
                self._p, x0, z, tables, self._h, *self._F, self.cfg.mu_R, self.cfg.mu_A
            )
        f = self._cost(x0, z, tables)
        return f, finite_difference_gradient(
            lambda v: self._cost(x0, v, tables), z, self.gradient_method, f0=f
        )

    def fun(self, z) -> float:
        return self._cost(self.x0, z, self._tables)

    def fun_and_grad(self, z):
        return self._cost_and_grad(self.x0, z, self._tables)

    def grad(self, z) -> np.ndarray:
        return self.fun_and_grad(z)[1]

    # parametric protocol
    n_state = 8
    # trust-region norms look at positions and road heights only
    state_norm_mask = np.array([True] * 4 + [False] * 4)

    @property
    def road_norm_mask(self) -> np.ndarray:
        return np.tile([True, False, True, False], self.cfg.horizon_N + 1)

    @property
    def params(self) -> np.ndarray:
        return np.concatenate([self.x0, self.w])

    def grad_at(self, z, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        x0, w = theta[:8], theta[8:]
        tables = self._tables if np.array_equal(w, self.w) else self._tables_for(w)
        return self._cost_and_grad(x0, z, tables)[1]

    def param_steps(self) -> np.ndarray:
        """Central-difference steps for the mixed second derivatives."""
        state = 1e-6 * np.maximum(1.0, np.abs(self.x0))
        road = np.tile([1e-6, 1e-5, 1e-6, 1e-5], self.cfg.horizon_N + 1)
        return np.concatenate([state, road])

    def with_params(self, x0=None, w=None) -> "HorizonOcp":
        return HorizonOcp(
            self.cfg, self.vehicle,
            self.x0 if x0 is None else x0, self.w if w is None else w,
            self.gradient_method,
        )


def finite_difference_gradient(
    f: Callable[[np.ndarray], float], z: np.ndarray, method: str = "forward", f0=None
) -> np.ndarray:
    """Forward or central differences with steps scaled to ``|z_j|``."""
    z = np.asarray(z, dtype=float)
    g = np.empty_like(z)
    if method == "forward":
        f0 = f(z) if f0 is None else f0
        for j in range(z.size):
            h = np.sqrt(_EPS) * max(1.0, abs(z[j]))
            zp = z.copy()
            zp[j] += h
            g[j] = (f(zp) - f0) / (zp[j] - z[j])
    elif method == "central":
        for j in range(z.size):
            h = _EPS ** (1 / 3) * max(1.0, abs(z[j]))
            zp, zm = z.copy(), z.copy()
            zp[j] += h
            zm[j] -= h
            g[j] = (f(zp) - f(zm)) / (zp[j] - zm[j])
    else:
        raise InvalidInputError(f"unknown difference method {method!r}")
    return g


def objective(cfg: OcpConfig, p: HalfCarParams, x0, z, w) -> float:
    """Horizon cost for controls ``z`` from state ``x0`` over road ``w``."""
    return HorizonOcp(cfg, p, x0, w).fun(z)


def gradient(cfg: OcpConfig, p: HalfCarParams, x0, z, w, method: str = "complex") -> np.ndarray:
    """Gradient of ``objective`` with respect to ``z``.

    ``method`` is ``"complex"`` (complex step, exact to roundoff),
    ``"forward"`` or ``"central"`` differences.
    """
    return HorizonOcp(cfg, p, x0, w, gradient_method=method).grad(z)
