import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from halfcar_nmpc.errors import InvalidInputError
from halfcar_nmpc.ocp import (
    HermiteRoad,
    HorizonOcp,
    OcpConfig,
    gradient,
    hermite_tables,
    nominal_forces,
    objective,
)
from halfcar_nmpc.vehicle_model import HalfCarParams, static_equilibrium

from conftest import random_instance

P = HalfCarParams()
CFG = OcpConfig()


def random_controls(rng, cfg=CFG):
    return rng.uniform(cfg.u_min, cfg.u_max, cfg.n_controls)


def flat_road(height=0.0, cfg=CFG):
    w = np.zeros(cfg.n_road)
    w[0::2] = height
    return w


def test_nominal_force_examples():
    F = nominal_forces(P)
    assert F.F1 == pytest.approx(3825.9, abs=1e-9) and F.F2 == pytest.approx(3825.9, abs=1e-9)
    G = nominal_forces(HalfCarParams(a=2.0, b=1.0))
    assert G.F1 == pytest.approx(5101.2, abs=1e-9) and G.F2 == pytest.approx(2550.6, abs=1e-9)


@settings(max_examples=30, deadline=None)
@given(a=st.floats(0.2, 3.0), b=st.floats(0.2, 3.0), m=st.floats(100.0, 3000.0))
def test_nominal_forces_sum_to_weight(a, b, m):
    p = HalfCarParams(a=a, b=b, m3=m)
    F = nominal_forces(p)
    assert F.F1 + F.F2 == pytest.approx(p.g * p.total_mass, rel=1e-14)


@pytest.mark.parametrize("seed", range(5))
def test_equilibrium_on_flat_road_costs_nothing(seed):
    z = random_controls(np.random.default_rng(seed))
    x0 = static_equilibrium(P, 0.01)
    assert abs(objective(CFG, P, x0, z, flat_road(0.01))) <= 1e-9
    assert np.linalg.norm(gradient(CFG, P, x0, z, flat_road(0.01))) <= 1e-6


def test_zero_weights_give_zero_cost():
    cfg = OcpConfig(mu_R=0.0, mu_A=0.0)
    x0, w = random_instance(3)
    assert objective(cfg, P, x0, random_controls(np.random.default_rng(3)), w) == 0.0


@pytest.mark.parametrize("seed", range(100))
def test_objective_is_non_negative(seed):
    x0, w = random_instance(seed)
    assert objective(CFG, P, x0, random_controls(np.random.default_rng(seed)), w) >= 0.0


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10**6), shift=st.floats(-0.5, 0.5))
def test_objective_invariant_under_rigid_translation(seed, shift):
    x0, w = random_instance(seed)
    z = random_controls(np.random.default_rng(seed))
    x1, w1 = x0.copy(), w.copy()
    x1[:3] += shift
    w1[0::2] += shift
    assert objective(CFG, P, x1, z, w1) == pytest.approx(objective(CFG, P, x0, z, w), rel=1e-7)


def test_handling_cost_depends_on_controls_away_from_equilibrium():
    cfg = OcpConfig(mu_A=0.0)
    x0, w = random_instance(8)
    g = gradient(cfg, P, x0, random_controls(np.random.default_rng(8)), w)
    assert np.linalg.norm(g) > 0


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300)


@pytest.mark.parametrize("seed", range(20))
def test_gradient_matches_central_differences(seed):
    x0, w = random_instance(seed)
    z = random_controls(np.random.default_rng(seed + 1000))
    g = gradient(CFG, P, x0, z, w)
    fd = gradient(CFG, P, x0, z, w, method="central")
    assert rel_err(g, fd) <= 1e-3


@pytest.mark.parametrize("seed", range(5))
def test_forward_and_central_differences_agree(seed):
    x0, w = random_instance(seed)
    z = random_controls(np.random.default_rng(seed))
    fwd = gradient(CFG, P, x0, z, w, method="forward")
    ctr = gradient(CFG, P, x0, z, w, method="central")
    big = np.abs(ctr) > 1e-3 * np.abs(ctr).max()
    assert np.all(np.abs(fwd - ctr)[big] <= 1e-3 * np.abs(ctr)[big])


@pytest.mark.parametrize("seed", range(5))
def test_directional_derivative(seed):
    rng = np.random.default_rng(seed)
    x0, w = random_instance(seed)
    z = rng.uniform(1000.0, 4000.0, CFG.n_controls)
    d = rng.standard_normal(CFG.n_controls)
    h = 1e-2
    fd = (objective(CFG, P, x0, z + h * d, w) - objective(CFG, P, x0, z - h * d, w)) / (2 * h)
    dd = gradient(CFG, P, x0, z, w) @ d
    assert abs(dd - fd) <= 1e-3 * abs(fd)


def test_hermite_road_reproduces_grid_values():
    rng = np.random.default_rng(0)
    w = rng.standard_normal(CFG.n_road)
    tab = hermite_tables(w, CFG.sampling_period_T, CFG.substeps)
    grid = w.reshape(-1, 4)
    np.testing.assert_allclose(tab[:, 0], grid[:-1], rtol=0, atol=1e-14)
    np.testing.assert_allclose(tab[:, -1], grid[1:], rtol=0, atol=1e-14)


def test_hermite_rates_are_derivatives_of_heights():
    w = np.zeros(8)
    w[[0, 1, 4, 5]] = [0.01, 0.3, -0.02, 0.1]
    T, n = 0.1, 2000
    tab = hermite_tables(w, T, n)[0]
    dt = T / (2 * n)
    fd = np.gradient(tab[:, 0], dt)
    np.testing.assert_allclose(fd[1:-1], tab[1:-1, 1], rtol=0, atol=1e-6)


def test_hermite_road_guards_its_grid():
    road = HermiteRoad(np.zeros(CFG.n_road), 1.0, 0.1)
    assert road.table(1.2, 0.1, 4).shape == (9, 4)
    with pytest.raises(InvalidInputError):
        road.table(1.25, 0.1, 4)
    with pytest.raises(InvalidInputError):
        road.table(1.5, 0.1, 4)


def test_problem_validates_its_inputs():
    with pytest.raises(InvalidInputError):
        HorizonOcp(CFG, P, static_equilibrium(P), np.zeros(5))
    with pytest.raises(InvalidInputError):
        OcpConfig(horizon_N=0)
    with pytest.raises(InvalidInputError):
        OcpConfig(u_min=600.0, u_max=500.0)
    with pytest.raises(InvalidInputError):
        OcpConfig(mu_R=-1.0)


def test_parameter_gradient_is_consistent():
    x0, w = random_instance(4)
    prob = HorizonOcp(CFG, P, x0, w)
    z = random_controls(np.random.default_rng(4))
    np.testing.assert_array_equal(prob.grad_at(z, prob.params), prob.grad(z))
    other = prob.with_params(w=w + 0.001)
    np.testing.assert_allclose(prob.grad_at(z, other.params), other.grad(z), rtol=1e-12)
