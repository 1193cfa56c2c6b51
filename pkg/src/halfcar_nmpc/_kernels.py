"""Compiled inner loops shared by the model, the integrator and the OCP.

Every kernel is written against generic scalar arithmetic so that the same
code runs on float64 and complex128 inputs; the complex specialisation is
what the complex-step gradient uses.

Parameter vector layout (see ``HalfCarParams.as_array``)::

    a, b, m1, m2, m3, I, k1, k2, d1, d2, k3, k4, g

Road rows carry ``(w1, w1dot, w2, w2dot)``.  Augmented states carry the
eight car states followed by the handling and comfort quadratures.
"""

import numpy as np
from numba import njit

N_STATE = 8
N_AUG = 10

# the imaginary step is far below roundoff; derivatives are exact to eps
COMPLEX_STEP = 1e-30


@njit(cache=True)
def forces(p, x, u1, u2, w1, w1d, w2, w2d):
    a = p[0]
    b = p[1]
    s4 = np.sin(x[3])
    c4 = np.cos(x[3])
    f1 = p[6] * (x[0] - w1) + p[8] * (x[4] - w1d)
    f2 = p[7] * (x[1] - w2) + p[9] * (x[5] - w2d)
    f3 = p[10] * (x[2] - x[0] - b * s4) + u1 * (x[6] - x[4] - b * x[7] * c4)
    f4 = p[11] * (x[2] - x[1] + a * s4) + u2 * (x[6] - x[5] + a * x[7] * c4)
    return f1, f2, f3, f4


@njit(cache=True)
def accelerations(p, x, u1, u2, w1, w1d, w2, w2d):
    f1, f2, f3, f4 = forces(p, x, u1, u2, w1, w1d, w2, w2d)
    g = p[12]
    a1 = g + (f3 - f1) / p[2]
    a2 = g + (f4 - f2) / p[3]
    a3 = g - (f3 + f4) / p[4]
    a4 = np.cos(x[3]) * (p[1] * f3 - p[0] * f4) / p[5]
    return a1, a2, a3, a4, f1, f2, f3, f4


@njit(cache=True)
def jerk(p, x, u1, u2, w1, w1d, w2, w2d):
    """Third derivative of the chassis height for piecewise-constant u."""
    a = p[0]
    b = p[1]
    a1, a2, a3, a4, f1, f2, f3, f4 = accelerations(p, x, u1, u2, w1, w1d, w2, w2d)
    s4 = np.sin(x[3])
    c4 = np.cos(x[3])
    v4 = x[7]
    df3 = p[10] * (x[6] - x[4] - b * v4 * c4) + u1 * (
        a3 - a1 - b * a4 * c4 + b * v4 * v4 * s4
    )
    df4 = p[11] * (x[6] - x[5] + a * v4 * c4) + u2 * (
        a3 - a2 + a * a4 * c4 - a * v4 * v4 * s4
    )
    return -(df3 + df4) / p[4]


@njit(cache=True)
def state_rhs(p, x, u1, u2, w1, w1d, w2, w2d, out):
    a1, a2, a3, a4, f1, f2, f3, f4 = accelerations(p, x, u1, u2, w1, w1d, w2, w2d)
    out[0] = x[4]
    out[1] = x[5]
    out[2] = x[6]
    out[3] = x[7]
    out[4] = a1
    out[5] = a2
    out[6] = a3
    out[7] = a4


@njit(cache=True)
def augmented_rhs(p, x, u1, u2, road, F1, F2, out):
    w1 = road[0]
    w1d = road[1]
    w2 = road[2]
    w2d = road[3]
    a1, a2, a3, a4, f1, f2, f3, f4 = accelerations(p, x, u1, u2, w1, w1d, w2, w2d)
    out[0] = x[4]
    out[1] = x[5]
    out[2] = x[6]
    out[3] = x[7]
    out[4] = a1
    out[5] = a2
    out[6] = a3
    out[7] = a4
    # without gravity there is no static load to normalise by
    s1 = F1 if F1 != 0.0 else 1.0
    s2 = F2 if F2 != 0.0 else 1.0
    e1 = (f1 - F1) / s1
    e2 = (f2 - F2) / s2
    out[8] = e1 * e1 + e2 * e2
    mj = p[4] * jerk(p, x, u1, u2, w1, w1d, w2, w2d)
    out[9] = mj * mj


@njit(cache=True)
def rk4_interval(p, x0, u1, u2, road, h, F1, F2):
    """Integrate the augmented ODE across one hold interval.

    ``road`` has ``2 * nsub + 1`` rows: the road at every RK4 node
    (substep starts, midpoints and ends are shared between neighbours).
    """
    nsub = (road.shape[0] - 1) // 2
    x = x0.copy()
    k1 = np.empty_like(x)
    k2 = np.empty_like(x)
    k3 = np.empty_like(x)
    k4 = np.empty_like(x)
    xt = np.empty_like(x)
    n = x.shape[0]
    for i in range(nsub):
        augmented_rhs(p, x, u1, u2, road[2 * i], F1, F2, k1)
        for m in range(n):
            xt[m] = x[m] + 0.5 * h * k1[m]
        augmented_rhs(p, xt, u1, u2, road[2 * i + 1], F1, F2, k2)
        for m in range(n):
            xt[m] = x[m] + 0.5 * h * k2[m]
        augmented_rhs(p, xt, u1, u2, road[2 * i + 1], F1, F2, k3)
        for m in range(n):
            xt[m] = x[m] + h * k3[m]
        augmented_rhs(p, xt, u1, u2, road[2 * i + 2], F1, F2, k4)
        for m in range(n):
            x[m] = x[m] + h / 6.0 * (k1[m] + 2.0 * k2[m] + 2.0 * k3[m] + k4[m])
    return x


@njit(cache=True)
def rk4_interval_dense(p, x0, u1, u2, road, h, F1, F2):
    """Like ``rk4_interval`` but returns the state after every substep."""
    nsub = (road.shape[0] - 1) // 2
    n = x0.shape[0]
    traj = np.empty((nsub + 1, n), dtype=x0.dtype)
    traj[0] = x0
    x = x0.copy()
    k1 = np.empty_like(x)
    k2 = np.empty_like(x)
    k3 = np.empty_like(x)
    k4 = np.empty_like(x)
    xt = np.empty_like(x)
    for i in range(nsub):
        augmented_rhs(p, x, u1, u2, road[2 * i], F1, F2, k1)
        for m in range(n):
            xt[m] = x[m] + 0.5 * h * k1[m]
        augmented_rhs(p, xt, u1, u2, road[2 * i + 1], F1, F2, k2)
        for m in range(n):
            xt[m] = x[m] + 0.5 * h * k2[m]
        augmented_rhs(p, xt, u1, u2, road[2 * i + 1], F1, F2, k3)
        for m in range(n):
            xt[m] = x[m] + h * k3[m]
        augmented_rhs(p, xt, u1, u2, road[2 * i + 2], F1, F2, k4)
        for m in range(n):
            x[m] = x[m] + h / 6.0 * (k1[m] + 2.0 * k2[m] + 2.0 * k3[m] + k4[m])
        traj[i + 1] = x
    return traj


@njit(cache=True)
def jerk_along(p, traj, u1, u2, road):
    """m3 * jerk at each row of ``traj``; ``road`` holds matching rows."""
    out = np.empty(traj.shape[0])
    for i in range(traj.shape[0]):
        r = road[i]
        out[i] = p[4] * jerk(p, traj[i], u1, u2, r[0], r[1], r[2], r[3])
    return out


@njit(cache=True)
def _tail_cost(p, xk, z, k0, tables, h, F1, F2, mu_r, mu_a):
    x = xk.copy()
    for k in range(k0, tables.shape[0]):
        x = rk4_interval(p, x, z[2 * k], z[2 * k + 1], tables[k], h, F1, F2)
    return mu_r * (x[8] - xk[8]) + mu_a * (x[9] - xk[9])


@njit(cache=True)
def horizon_cost(p, x0, z, tables, h, F1, F2, mu_r, mu_a):
    """Weighted horizon cost for the 2N decision vector ``z``."""
    xa = np.zeros(N_AUG, dtype=z.dtype)
    for m in range(N_STATE):
        xa[m] = x0[m]
    return _tail_cost(p, xa, z, 0, tables, h, F1, F2, mu_r, mu_a)


@njit(cache=True)
def horizon_cost_and_grad(p, x0, z, tables, h, F1, F2, mu_r, mu_a):
    """Cost and complex-step gradient.

    A real forward pass stores the augmented state at each interval start;
    the perturbation of an interval-k control then only needs the tail
    rollout from there on.
    """
    nint = tables.shape[0]
    starts = np.zeros((nint + 1, N_AUG))
    for m in range(N_STATE):
        starts[0, m] = x0[m]
    for k in range(nint):
        starts[k + 1] = rk4_interval(
            p, starts[k], z[2 * k], z[2 * k + 1], tables[k], h, F1, F2
        )
    total = mu_r * starts[nint, 8] + mu_a * starts[nint, 9]
    grad = np.empty(z.shape[0])
    zc = z.astype(np.complex128)
    for j in range(z.shape[0]):
        k = j // 2
        zc[j] = z[j] + 1j * COMPLEX_STEP
        xk = starts[k].astype(np.complex128)
        tail = _tail_cost(p, xk, zc, k, tables, h, F1, F2, mu_r, mu_a)
        grad[j] = tail.imag / COMPLEX_STEP
        zc[j] = z[j]
    return total, grad
