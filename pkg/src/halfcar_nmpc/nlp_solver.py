"""Projected BFGS for box-constrained NLPs, with KKT diagnostics.

The iteration follows the projected-Newton pattern: components that sit on
(or within an epsilon of) a bound with the gradient pushing outward are
moved by a projected gradient step, the rest by a quasi-Newton step, and an
Armijo backtracking search along the projection arc enforces descent.
Internally the variables are scaled to the box width and the objective to
its initial magnitude, which makes the identity a sensible initial Hessian.

Convergence is measured by the scaled projected gradient
``max_j |P(g)_j| * (ub_j - lb_j) / max(1, |f|)``.  The same scaling is used
for the strict-complementarity test.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg

from .errors import InvalidProblemError, NonConvergenceError

log = logging.getLogger(__name__)

_EPS = np.finfo(float).eps


class ActiveStatus(enum.IntEnum):
    FREE = 0
    AT_LOWER = 1
    AT_UPPER = 2


@dataclass(frozen=True)
class SolverConfig:
    kkt_tolerance: float = 1e-6
    max_iterations: int = 200
    bfgs_reset_period: int = 0  # 0 never resets
    armijo: float = 1e-4
    backtrack: float = 0.5
    max_backtracks: int = 40
    complementarity_threshold: float = 1e-8
    hessian_floor: float = 1e-10
    compute_hessian: bool = True
    polish: bool = False  # Newton refinement on the free set after convergence
    # a line search that stalls at roundoff counts as converged below this
    stall_tolerance: float = 1e-4

    def __post_init__(self):
        if not self.kkt_tolerance > 0:
            raise ValueError("kkt_tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.bfgs_reset_period < 0:
            raise ValueError("bfgs_reset_period must be >= 0")


@dataclass
class BoxProblem:
    """Objective and gradient callables over a box."""

    fun: Callable[[np.ndarray], float]
    grad: Callable[[np.ndarray], np.ndarray]
    lower: np.ndarray
    upper: np.ndarray
    fun_and_grad: Optional[Callable] = None

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)


@dataclass
class KktPoint:
    z_star: np.ndarray
    objective: float
    gradient: np.ndarray
    multipliers_lower: np.ndarray
    multipliers_upper: np.ndarray
    active_set: np.ndarray  # ActiveStatus codes
    reduced_hessian: Optional[np.ndarray]
    kkt_residual: float
    iterations: int = 0
    strict_complementarity: bool = True
    hessian_positive_definite: bool = False
    converged: bool = True
    history: list = field(default_factory=list)

    @property
    def free(self) -> np.ndarray:
        return self.active_set == ActiveStatus.FREE

    @property
    def regular(self) -> bool:
        return self.strict_complementarity and self.hessian_positive_definite


def _fun_and_grad(problem, z):
    if getattr(problem, "fun_and_grad", None) is not None:
        f, g = problem.fun_and_grad(z)
    else:
        f, g = problem.fun(z), problem.grad(z)
    g = np.asarray(g, dtype=float)
    if not (np.isfinite(f) and np.all(np.isfinite(g))):
        raise InvalidProblemError("objective or gradient is not finite")
    return float(f), g


def _span(problem) -> np.ndarray:
    width = problem.upper - problem.lower
    return np.where(np.isfinite(width) & (width > 0), width, 1.0)


def _status(z, lower, upper) -> np.ndarray:
    status = np.full(z.shape, ActiveStatus.FREE, dtype=int)
    status[z <= lower] = ActiveStatus.AT_LOWER
    status[z >= upper] = ActiveStatus.AT_UPPER
    return status


def _projected_gradient(z, g, lower, upper) -> np.ndarray:
    pg = g.copy()
    at_lower = z <= lower
    at_upper = z >= upper
    pg[at_lower] = np.minimum(g[at_lower], 0.0)
    pg[at_upper] = np.maximum(g[at_upper], 0.0)
    return pg


def _stationarity(z, f, g, lower, upper, span) -> float:
    pg = _projected_gradient(z, g, lower, upper)
    return float(np.max(np.abs(pg) * span) / max(1.0, abs(f))) if z.size else 0.0


def kkt_residual(problem, point: KktPoint) -> float:
    """Largest violation of stationarity, feasibility and complementarity."""
    z = np.asarray(point.z_star, dtype=float)
    if z.size == 0:
        return 0.0
    f, g = _fun_and_grad(problem, z)
    lower, upper = problem.lower, problem.upper
    scale = _span(problem) / max(1.0, abs(f))
    lam_l, lam_u = point.multipliers_lower, point.multipliers_upper
    stationarity = np.abs(g - lam_l + lam_u) * scale
    feasibility = np.maximum(np.maximum(lower - z, z - upper), 0.0)
    gap_l = np.where(np.isfinite(lower), z - lower, 0.0)
    gap_u = np.where(np.isfinite(upper), upper - z, 0.0)
    complementarity = np.maximum(np.abs(lam_l * gap_l), np.abs(lam_u * gap_u)) / max(1.0, abs(f))
    sign = np.maximum(np.maximum(-lam_l, -lam_u), 0.0) * scale
    return float(max(stationarity.max(), feasibility.max(), complementarity.max(), sign.max()))


def reduced_hessian(problem, z: np.ndarray, free: np.ndarray) -> np.ndarray:
    """Central differences of the gradient over the free components."""
    idx = np.nonzero(free)[0]
    H = np.empty((idx.size, idx.size))
    for col, j in enumerate(idx):
        h = _EPS ** (1 / 3) * max(1.0, abs(z[j]))
        zp, zm = z.copy(), z.copy()
        zp[j] += h
        zm[j] -= h
        gp = _fun_and_grad(problem, zp)[1]
        gm = _fun_and_grad(problem, zm)[1]
        H[:, col] = (gp[idx] - gm[idx]) / (zp[j] - zm[j])
    return 0.5 * (H + H.T)


def kkt_point(
    problem, z, cfg: SolverConfig = SolverConfig(), iterations: int = 0,
    history=None, converged: bool = True, fg=None,
) -> KktPoint:
    """Evaluate multipliers, active set and second-order data at ``z``."""
    z = np.asarray(z, dtype=float)
    f, g = fg if fg is not None else _fun_and_grad(problem, z)
    lower, upper = problem.lower, problem.upper
    status = _status(z, lower, upper)
    lam_l = np.where(status == ActiveStatus.AT_LOWER, np.maximum(g, 0.0), 0.0)
    lam_u = np.where(status == ActiveStatus.AT_UPPER, np.maximum(-g, 0.0), 0.0)
    scale = _span(problem) / max(1.0, abs(f))
    active = status != ActiveStatus.FREE
    strict = bool(np.all((lam_l + lam_u)[active] * scale[active] > cfg.complementarity_threshold))
    H = None
    positive = False
    if cfg.compute_hessian:
        H = reduced_hessian(problem, z, status == ActiveStatus.FREE)
        if H.size == 0:
            positive = True
        else:
            eig = np.linalg.eigvalsh(H)
            positive = bool(eig[0] > cfg.hessian_floor * max(1.0, abs(eig[-1])))
    point = KktPoint(
        z_star=z, objective=f, gradient=g, multipliers_lower=lam_l,
        multipliers_upper=lam_u, active_set=status, reduced_hessian=H,
        kkt_residual=0.0, iterations=iterations, strict_complementarity=strict,
        hessian_positive_definite=positive, converged=converged,
        history=list(history or [f]),
    )
    point.kkt_residual = _stationarity(z, f, g, lower, upper, _span(problem))
    return point


def _bfgs_update(B, s, y):
    """Powell-damped BFGS update keeping ``B`` positive definite."""
    Bs = B @ s
    sBs = s @ Bs
    if sBs <= 0 or not np.isfinite(sBs):
        return np.eye(B.shape[0])
    sy = s @ y
    theta = 1.0 if sy >= 0.2 * sBs else 0.8 * sBs / (sBs - sy)
    r = theta * y + (1 - theta) * Bs
    return B - np.outer(Bs, Bs) / sBs + np.outer(r, r) / (s @ r)


def _polish(problem, cfg, z, f, g, span):
    """Newton steps on the free set with a difference Hessian."""
    lower, upper = problem.lower, problem.upper
    res = _stationarity(z, f, g, lower, upper, span)
    for _ in range(5):
        free = _status(z, lower, upper) == ActiveStatus.FREE
        if not free.any():
            break
        H = reduced_hessian(problem, z, free)
        try:
            step = scipy.linalg.solve(H, -g[free], assume_a="sym")
        except (np.linalg.LinAlgError, ValueError):
            break
        trial = z.copy()
        trial[free] = np.clip(z[free] + step, lower[free], upper[free])
        ft, gt = _fun_and_grad(problem, trial)
        rt = _stationarity(trial, ft, gt, lower, upper, span)
        # near the optimum f is flat to roundoff; stationarity decides
        if not (rt < res and ft <= f + 16 * _EPS * max(1.0, abs(f))):
            break
        z, f, g, res = trial, ft, gt, rt
    return z, f, g


def solve(cfg: SolverConfig, problem, z_init) -> KktPoint:
    """Minimise over the box starting from ``z_init`` (projected first)."""
    lower, upper = problem.lower, problem.upper
    span = _span(problem)
    z = np.clip(np.asarray(z_init, dtype=float), lower, upper)
    n = z.size
    f, g = _fun_and_grad(problem, z)
    fscale = max(1.0, abs(f))
    B = np.eye(n)
    history = [f]
    tol = cfg.kkt_tolerance
    it = 0
    since_reset = 0
    finite_lo = np.isfinite(lower)
    finite_hi = np.isfinite(upper)

    def fail(msg):
        point = kkt_point(problem, z, cfg, it, history, converged=False, fg=(f, g))
        raise NonConvergenceError(msg, point)

    while _stationarity(z, f, g, lower, upper, span) > tol:
        if it >= cfg.max_iterations:
            fail(f"no convergence in {cfg.max_iterations} iterations")
        it += 1
        gs = g * span / fscale
        ys = np.where(finite_lo, (z - lower) / span, np.inf)
        us = np.where(finite_hi, (upper - z) / span, np.inf)
        wk = np.linalg.norm(np.clip(-gs, -ys, us))
        eps_act = min(1e-3, wk)
        active = ((ys <= eps_act) & (gs > 0)) | ((us <= eps_act) & (gs < 0))
        free = ~active
        d = np.zeros(n)
        d[active] = -gs[active]
        if free.any():
            try:
                c = scipy.linalg.cho_factor(B[np.ix_(free, free)])
                d[free] = scipy.linalg.cho_solve(c, -gs[free])
            except np.linalg.LinAlgError:
                B = np.eye(n)
                d[free] = -gs[free]
            if gs[free] @ d[free] >= 0:
                B = np.eye(n)
                d[free] = -gs[free]

        accepted = False
        for attempt in range(2):
            alpha = 1.0
            for _ in range(cfg.max_backtracks):
                z_new = np.clip(z + alpha * d * span, lower, upper)
                moved = (z - z_new) / span
                pred = -alpha * (gs[free] @ d[free]) + gs[active] @ moved[active]
                f_new = problem.fun(z_new)
                if not np.isfinite(f_new):
                    raise InvalidProblemError("objective is not finite")
                if f - f_new >= cfg.armijo * pred * fscale and f_new <= f:
                    accepted = True
                    break
                alpha *= cfg.backtrack
            if accepted or attempt == 1:
                break
            # predicted decrease below roundoff or a stale Hessian: retry
            # once along the projected steepest descent direction
            B = np.eye(n)
            d = -gs
        if not accepted:
            if _stationarity(z, f, g, lower, upper, span) <= max(cfg.stall_tolerance, tol):
                log.debug("line search stalled at roundoff after %d iterations", it)
                break
            fail("line search failed")

        f_new, g_new = _fun_and_grad(problem, z_new)
        s = (z_new - z) / span
        y = (g_new - g) * span / fscale
        since_reset += 1
        if cfg.bfgs_reset_period and since_reset >= cfg.bfgs_reset_period:
            B = np.eye(n)
            since_reset = 0
        elif s @ s > 0:
            B = _bfgs_update(B, s, y)
        z, f, g = z_new, f_new, g_new
        history.append(f)

    if cfg.polish:
        z, f, g = _polish(problem, cfg, z, f, g, span)
        if history[-1] != f:
            history.append(f)
    log.debug("projected BFGS converged in %d iterations, f=%.6g", it, f)
    return kkt_point(problem, z, cfg, it, history, fg=(f, g))
