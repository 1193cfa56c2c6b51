import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from halfcar_nmpc.errors import InvalidProblemError, NonConvergenceError
from halfcar_nmpc.nlp_solver import (
    ActiveStatus,
    BoxProblem,
    KktPoint,
    SolverConfig,
    kkt_point,
    kkt_residual,
    solve,
)
from halfcar_nmpc.ocp import HorizonOcp, OcpConfig
from halfcar_nmpc.vehicle_model import HalfCarParams, static_equilibrium

from conftest import random_instance

CFG = SolverConfig()


def quadratic(Q, c, lower, upper):
    Q = np.asarray(Q, dtype=float)
    c = np.asarray(c, dtype=float)
    return BoxProblem(
        fun=lambda z: 0.5 * z @ Q @ z - c @ z,
        grad=lambda z: Q @ z - c,
        lower=lower, upper=upper,
    )


def one_d(target):
    return BoxProblem(
        fun=lambda z: float((z[0] - target) ** 2),
        grad=lambda z: np.array([2 * (z[0] - target)]),
        lower=[200.0], upper=[5000.0],
    )


def test_interior_one_dimensional_minimum():
    pt = solve(CFG, one_d(300.0), [2500.0])
    assert pt.z_star[0] == pytest.approx(300.0, abs=1e-6)
    assert pt.multipliers_lower[0] == 0.0 and pt.multipliers_upper[0] == 0.0
    assert pt.active_set[0] == ActiveStatus.FREE


def test_lower_bound_one_dimensional_minimum():
    prob = one_d(100.0)
    pt = solve(CFG, prob, [2500.0])
    assert pt.z_star[0] == 200.0
    assert pt.multipliers_lower[0] == pytest.approx(200.0)
    assert pt.active_set[0] == ActiveStatus.AT_LOWER
    assert kkt_residual(prob, pt) <= 1e-10
    assert pt.regular


def test_residual_flags_bound_violation():
    prob = one_d(100.0)
    pt = kkt_point(prob, [200.0])
    bad = KktPoint(
        z_star=np.array([199.5]), objective=0.0, gradient=np.zeros(1),
        multipliers_lower=pt.multipliers_lower, multipliers_upper=pt.multipliers_upper,
        active_set=pt.active_set, reduced_hessian=None, kkt_residual=0.0,
    )
    assert kkt_residual(prob, bad) >= 0.5


def horizon_problem(seed):
    x0, w = random_instance(seed)
    return HorizonOcp(OcpConfig(), HalfCarParams(), x0, w)


@pytest.mark.parametrize("seed", range(4))
def test_horizon_solution_is_feasible_descending_and_stationary(seed):
    prob = horizon_problem(seed)
    pt = solve(CFG, prob, np.full(10, 2600.0))
    assert np.all(pt.z_star >= prob.lower) and np.all(pt.z_star <= prob.upper)
    assert np.all(np.diff(pt.history) <= 0)
    assert kkt_residual(prob, pt) <= CFG.stall_tolerance
    assert pt.converged


@pytest.mark.parametrize("seed", range(3))
def test_restart_from_solution(seed):
    prob = horizon_problem(seed)
    first = solve(CFG, prob, np.full(10, 2600.0))
    again = solve(CFG, prob, first.z_star)
    assert again.iterations <= 2
    np.testing.assert_allclose(again.z_star, first.z_star, rtol=0, atol=1e-8 * 4800)


def test_equilibrium_problem_is_solved_at_once():
    p = HalfCarParams()
    prob = HorizonOcp(OcpConfig(), p, static_equilibrium(p), np.zeros(24))
    pt = solve(CFG, prob, np.linspace(300, 4000, 10))
    assert abs(pt.objective) <= 1e-9
    assert pt.kkt_residual <= 1e-6


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10**6), n=st.integers(1, 8))
def test_convex_separable_quadratic(seed, n):
    rng = np.random.default_rng(seed)
    d = rng.uniform(0.5, 5.0, n)
    c = rng.uniform(-5.0, 5.0, n)
    lo, hi = -np.ones(n), np.ones(n)
    pt = solve(SolverConfig(kkt_tolerance=1e-12, polish=True), quadratic(np.diag(d), c, lo, hi), np.zeros(n))
    np.testing.assert_allclose(pt.z_star, np.clip(c / d, lo, hi), rtol=0, atol=1e-8)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6), n=st.integers(2, 8))
def test_convex_quadratic_with_interior_minimum(seed, n):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n, n))
    Q = A @ A.T + n * np.eye(n)
    z_true = rng.uniform(-0.5, 0.5, n)
    pt = solve(
        SolverConfig(kkt_tolerance=1e-12, polish=True),
        quadratic(Q, Q @ z_true, -np.ones(n), np.ones(n)),
        rng.uniform(-1, 1, n),
    )
    np.testing.assert_allclose(pt.z_star, z_true, rtol=0, atol=1e-8)
    assert pt.hessian_positive_definite


def test_coupled_quadratic_with_active_bounds():
    # minimiser of the unconstrained problem lies outside: check KKT by hand
    Q = np.array([[2.0, 0.5], [0.5, 1.0]])
    c = np.array([10.0, -3.0])
    pt = solve(SolverConfig(kkt_tolerance=1e-12, polish=True), quadratic(Q, c, [-1, -1], [1, 1]), [0.0, 0.0])
    assert pt.z_star[0] == 1.0
    assert pt.z_star[1] == pytest.approx(-1.0)
    g = Q @ pt.z_star - c
    assert g[0] < 0 and g[1] > 0  # upper active on 0, lower on 1
    assert pt.multipliers_upper[0] == pytest.approx(-g[0])


def test_iteration_limit_raises_with_best_point():
    Q = np.diag([1.0, 1e4])
    prob = quadratic(Q, [1.0, 1.0], [-10, -10], [10, 10])
    with pytest.raises(NonConvergenceError) as info:
        solve(SolverConfig(max_iterations=1, kkt_tolerance=1e-14), prob, [9.0, 9.0])
    best = info.value.point
    assert best is not None and not best.converged
    assert prob.fun(best.z_star) < prob.fun(np.array([9.0, 9.0]))


def test_non_finite_objective_raises():
    prob = BoxProblem(fun=lambda z: np.nan, grad=lambda z: np.zeros(1), lower=[0.0], upper=[1.0])
    with pytest.raises(InvalidProblemError):
        solve(CFG, prob, [0.5])


def test_start_is_projected_into_the_box():
    pt = solve(CFG, one_d(300.0), [9999.0])
    assert 200.0 <= pt.z_star[0] <= 5000.0


def test_bfgs_reset_period_still_converges():
    Q = np.array([[3.0, 1.0, 0.0], [1.0, 2.0, 0.5], [0.0, 0.5, 1.0]])
    z_true = np.array([0.2, -0.3, 0.4])
    prob = quadratic(Q, Q @ z_true, -np.ones(3), np.ones(3))
    pt = solve(SolverConfig(bfgs_reset_period=3, kkt_tolerance=1e-12), prob, np.zeros(3))
    np.testing.assert_allclose(pt.z_star, z_true, atol=1e-8)


def test_invalid_configuration():
    with pytest.raises(ValueError):
        SolverConfig(kkt_tolerance=0.0)
    with pytest.raises(ValueError):
        SolverConfig(max_iterations=0)
