"""Parametric sensitivities of the horizon solution and the control update.

At a regular KKT point (strict complementarity, positive definite reduced
Hessian) the active set is locally stable and the free components of the
minimiser are differentiable in the parameters:

    dz_F/dp = -H_FF^{-1} d(grad_F f)/dp,    dz_A/dp = 0.

The mixed second derivatives are central differences of the gradient in
each parameter; one Cholesky factorisation of H_FF serves every column.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg

from .errors import SensitivityUnavailableError, UpdateRefusedError
from .nlp_solver import ActiveStatus, KktPoint, reduced_hessian


@dataclass
class ParametricProblem:
    """Generic parametric box problem ``min_z f(z, theta)``.

    The first ``n_state`` parameters play the role of the initial state,
    the rest that of the road parameters.
    """

    fun_p: Callable[[np.ndarray, np.ndarray], float]
    grad_p: Callable[[np.ndarray, np.ndarray], np.ndarray]
    lower: np.ndarray
    upper: np.ndarray
    params: np.ndarray
    n_state: int

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        self.params = np.asarray(self.params, dtype=float)

    def fun(self, z):
        return self.fun_p(np.asarray(z, dtype=float), self.params)

    def grad(self, z):
        return np.asarray(self.grad_p(np.asarray(z, dtype=float), self.params), dtype=float)

    def grad_at(self, z, theta):
        return np.asarray(self.grad_p(np.asarray(z, dtype=float), theta), dtype=float)

    def param_steps(self):
        return 1e-6 * np.maximum(1.0, np.abs(self.params))


@dataclass
class SensitivityBundle:
    du_dx: np.ndarray
    du_dw: np.ndarray
    base_x: np.ndarray
    base_w: np.ndarray
    base_u: np.ndarray
    active_set: np.ndarray
    regular: bool
    lower: np.ndarray
    upper: np.ndarray
    state_norm_mask: Optional[np.ndarray] = None
    road_norm_mask: Optional[np.ndarray] = None
    controls_per_step: int = 2


@dataclass
class UpdateReport:
    updated_u: np.ndarray
    raw_u: np.ndarray
    clamped_components: list = field(default_factory=list)
    structure_change: bool = False
    out_of_trust: bool = False
    deviation_norms: tuple = (0.0, 0.0)


def compute_sensitivities(
    problem, point: KktPoint, fd_step_policy=None
) -> SensitivityBundle:
    """Sensitivities of ``point.z_star`` to the problem parameters.

    ``fd_step_policy`` is an array of steps, a callable ``theta -> steps``
    or ``None`` for the problem's own ``param_steps()``.
    """
    z = np.asarray(point.z_star, dtype=float)
    theta = np.asarray(problem.params, dtype=float)
    if fd_step_policy is None:
        steps = np.asarray(problem.param_steps(), dtype=float)
    elif callable(fd_step_policy):
        steps = np.asarray(fd_step_policy(theta), dtype=float)
    else:
        steps = np.broadcast_to(np.asarray(fd_step_policy, dtype=float), theta.shape)

    free = point.active_set == ActiveStatus.FREE
    idx = np.nonzero(free)[0]
    D = np.zeros((z.size, theta.size))
    if idx.size:
        H = point.reduced_hessian
        if H is None:
            H = reduced_hessian(problem, z, free)
        try:
            factor = scipy.linalg.cho_factor(H)
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise SensitivityUnavailableError("reduced Hessian is not positive definite") from exc
        mixed = np.empty((idx.size, theta.size))
        for i in range(theta.size):
            tp, tm = theta.copy(), theta.copy()
            tp[i] += steps[i]
            tm[i] -= steps[i]
            gp = problem.grad_at(z, tp)[idx]
            gm = problem.grad_at(z, tm)[idx]
            mixed[:, i] = (gp - gm) / (tp[i] - tm[i])
        D[idx] = -scipy.linalg.cho_solve(factor, mixed)

    ns = problem.n_state
    return SensitivityBundle(
        du_dx=D[:, :ns],
        du_dw=D[:, ns:],
        base_x=theta[:ns].copy(),
        base_w=theta[ns:].copy(),
        base_u=z.copy(),
        active_set=point.active_set.copy(),
        regular=point.regular,
        lower=np.asarray(problem.lower, dtype=float),
        upper=np.asarray(problem.upper, dtype=float),
        state_norm_mask=getattr(problem, "state_norm_mask", None),
        road_norm_mask=getattr(problem, "road_norm_mask", None),
    )


def _masked_norm(v, mask):
    return float(np.linalg.norm(v if mask is None else v[mask]))


def apply_update(
    bundle: SensitivityBundle, measured_x, measured_w,
    trust_state_norm: float = 0.05, trust_road_norm: float = 0.05,
) -> UpdateReport:
    """First-order correction of the base controls, clamped to the box."""
    if not bundle.regular:
        raise UpdateRefusedError("sensitivities were taken at a non-regular point")
    mx = measured_x.as_array() if hasattr(measured_x, "as_array") else measured_x
    dx = np.asarray(mx, dtype=float) - bundle.base_x
    dw = np.asarray(measured_w, dtype=float) - bundle.base_w
    raw = bundle.base_u + bundle.du_dx @ dx + bundle.du_dw @ dw
    updated = np.clip(raw, bundle.lower, bundle.upper)
    clamped = [int(j) for j in np.nonzero(updated != raw)[0]]
    norms = (_masked_norm(dx, bundle.state_norm_mask), _masked_norm(dw, bundle.road_norm_mask))
    out_of_trust = norms[0] > trust_state_norm or norms[1] > trust_road_norm
    was_free = bundle.active_set == ActiveStatus.FREE
    hit = (updated <= bundle.lower) | (updated >= bundle.upper)
    structure = bool(np.any(was_free & hit)) or out_of_trust
    return UpdateReport(
        updated_u=updated, raw_u=raw, clamped_components=clamped,
        structure_change=structure, out_of_trust=out_of_trust, deviation_norms=norms,
    )


def detect_structure_change(
    bundle: SensitivityBundle, candidate_u, horizon_check_index: int = 1
) -> bool:
    """Whether the active set changes within the first open-loop steps.

    Components beyond ``horizon_check_index`` are ignored: they are
    re-planned before they are ever applied.
    """
    cand = np.asarray(candidate_u, dtype=float)
    stop = min(cand.size, (horizon_check_index + 1) * bundle.controls_per_step)
    c = cand[:stop]
    lo, hi = bundle.lower[:stop], bundle.upper[:stop]
    if np.any((c < lo) | (c > hi)):
        return True
    status = np.full(c.shape, ActiveStatus.FREE, dtype=int)
    status[c <= lo] = ActiveStatus.AT_LOWER
    status[c >= hi] = ActiveStatus.AT_UPPER
    return bool(np.any(status != bundle.active_set[:stop]))
