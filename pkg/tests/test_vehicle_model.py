import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from halfcar_nmpc.errors import InvalidInputError, ModelValidityError, NoEquilibriumError
from halfcar_nmpc.ocp import nominal_forces
from halfcar_nmpc.vehicle_model import (
    DamperControl,
    HalfCarParams,
    HalfCarState,
    RoadPoint,
    chassis_jerk,
    dynamics_rhs,
    static_equilibrium,
    suspension_forces,
)

from jerk_oracle import jerk_vs_fd, random_case, relative_error

P = HalfCarParams()
small = st.floats(-0.05, 0.05)
rate = st.floats(-1.0, 1.0)
damping = st.floats(200.0, 5000.0)


def test_forces_vanish_at_rest_on_zero_road():
    f = suspension_forces(P, HalfCarState(), DamperControl(1234.0, 321.0), RoadPoint())
    assert f == (0.0, 0.0, 0.0, 0.0)


def test_forces_hand_example():
    f = suspension_forces(P, HalfCarState(x1=0.01), DamperControl(200.0, 200.0), RoadPoint())
    assert f.f1 == pytest.approx(2000.0, abs=1e-9)
    assert f.f3 == pytest.approx(-1000.0, abs=1e-9)
    assert f.f2 == 0.0 and f.f4 == 0.0


def test_equilibrium_forces_match_nominal_loads():
    f = suspension_forces(P, static_equilibrium(P), DamperControl(500.0, 500.0), RoadPoint())
    F = nominal_forces(P)
    assert f.f3 == pytest.approx(3678.75, abs=1e-6)
    assert f.f4 == pytest.approx(3678.75, abs=1e-6)
    assert abs(f.f1 - 3825.9) <= 1e-6 and abs(f.f2 - 3825.9) <= 1e-6
    assert abs(F.F1 - 3825.9) <= 1e-6 and abs(F.F2 - 3825.9) <= 1e-6


def test_equilibrium_state_values():
    s = static_equilibrium(P)
    assert s.x4 == 0.0
    assert s.x1 == pytest.approx(0.0191295, abs=1e-12)
    assert s.x2 == pytest.approx(0.0191295, abs=1e-12)
    assert s.x3 == pytest.approx(0.055917, abs=1e-12)
    assert (s.v1, s.v2, s.v3, s.v4) == (0.0, 0.0, 0.0, 0.0)


@pytest.mark.parametrize("u", [200.0, 2600.0, 5000.0])
def test_equilibrium_is_a_fixed_point(u):
    rhs = dynamics_rhs(P, static_equilibrium(P), DamperControl(u, u), RoadPoint())
    assert np.linalg.norm(rhs) <= 1e-9


def test_equilibrium_on_uneven_heights_is_a_fixed_point():
    p = HalfCarParams(a=1.2, b=0.8, m1=20.0)
    s = static_equilibrium(p, 0.03, -0.01)
    rhs = dynamics_rhs(p, s, DamperControl(800.0, 900.0), RoadPoint(w1=0.03, w2=-0.01))
    assert np.linalg.norm(rhs) <= 1e-9


def test_equilibrium_shifts_with_road_height():
    s0, sh = static_equilibrium(P).as_array(), static_equilibrium(P, 0.07).as_array()
    np.testing.assert_allclose(sh - s0, [0.07, 0.07, 0.07, 0, 0, 0, 0, 0], atol=1e-15)


def test_doubled_masses_double_wheel_deflections():
    heavy = HalfCarParams(m1=30.0, m2=30.0, m3=1500.0)
    assert static_equilibrium(heavy).x1 == pytest.approx(2 * static_equilibrium(P).x1, rel=1e-14)
    assert static_equilibrium(heavy).x2 == pytest.approx(2 * static_equilibrium(P).x2, rel=1e-14)


def test_degenerate_springs_have_no_equilibrium():
    with pytest.raises(NoEquilibriumError):
        static_equilibrium(HalfCarParams(k4=1e-3))


def test_free_fall_from_zero_state():
    rhs = dynamics_rhs(P, HalfCarState(), DamperControl(300.0, 300.0), RoadPoint())
    np.testing.assert_array_equal(rhs[:4], 0.0)
    np.testing.assert_allclose(rhs[4:7], 9.81, rtol=0, atol=1e-15)
    assert rhs[7] == 0.0


@settings(max_examples=60, deadline=None)
@given(x=small, x3=small, v=rate, v3=rate, u=damping, w=small, wd=rate)
def test_symmetric_configuration_has_no_pitch_acceleration(x, x3, v, v3, u, w, wd):
    s = HalfCarState(x1=x, x2=x, x3=x3, v1=v, v2=v, v3=v3)
    rhs = dynamics_rhs(P, s, DamperControl(u, u), RoadPoint(w1=w, w2=w, w1dot=wd, w2dot=wd))
    assert rhs[7] == 0.0


@settings(max_examples=60, deadline=None)
@given(
    state=st.lists(small, min_size=4, max_size=4),
    rates=st.lists(rate, min_size=4, max_size=4),
    u1=damping, u2=damping, shift=st.floats(-1.0, 1.0),
)
def test_rigid_vertical_translation_leaves_accelerations(state, rates, u1, u2, shift):
    x = np.array(state + rates)
    r = np.array([0.01, 0.2, -0.01, -0.1])
    moved_x, moved_r = x.copy(), r.copy()
    moved_x[:3] += shift
    moved_r[[0, 2]] += shift
    a = dynamics_rhs(P, x, (u1, u2), r)
    b = dynamics_rhs(P, moved_x, (u1, u2), moved_r)
    np.testing.assert_allclose(b, a, rtol=1e-9, atol=1e-6)


@settings(max_examples=40, deadline=None)
@given(
    state=st.lists(small, min_size=4, max_size=4),
    rates=st.lists(rate, min_size=4, max_size=4),
    ua=st.tuples(damping, damping), ub=st.tuples(damping, damping), lam=st.floats(0.0, 1.0),
)
def test_forces_and_dynamics_are_affine_in_the_controls(state, rates, ua, ub, lam):
    x = np.array(state + rates)
    r = np.array([0.005, -0.3, 0.01, 0.1])
    um = tuple(lam * a + (1 - lam) * b for a, b in zip(ua, ub))
    fa, fb, fm = (np.array(suspension_forces(P, x, u, r)) for u in (ua, ub, um))
    np.testing.assert_allclose(fm, lam * fa + (1 - lam) * fb, rtol=1e-10, atol=1e-7)
    da, db, dm = (dynamics_rhs(P, x, u, r) for u in (ua, ub, um))
    np.testing.assert_allclose(dm, lam * da + (1 - lam) * db, rtol=1e-10, atol=1e-8)


def test_jerk_vanishes_at_equilibrium():
    assert abs(chassis_jerk(P, static_equilibrium(P), DamperControl(700.0, 900.0), RoadPoint())) <= 1e-9


def test_jerk_symmetric_case_matches_difference_quotient():
    eq = static_equilibrium(P).as_array()
    x = eq.copy()
    x[:2] += 0.004
    j, fd = jerk_vs_fd(P, x, np.array([1500.0, 1500.0]), np.zeros(4))
    assert math.isfinite(j)
    assert relative_error(j, fd) <= 1e-4


@pytest.mark.parametrize("seed", range(100))
def test_jerk_matches_difference_quotient_along_trajectory(seed):
    p, x, u, road = random_case(np.random.default_rng(seed))
    j, fd = jerk_vs_fd(p, x, u, road)
    assert relative_error(j, fd) <= 1e-4


def test_pitch_singularity_is_rejected():
    with pytest.raises(ModelValidityError):
        dynamics_rhs(P, HalfCarState(x4=math.pi / 2), DamperControl(300.0, 300.0), RoadPoint())


@pytest.mark.parametrize("bad", [math.nan, math.inf])
def test_non_finite_inputs_are_rejected(bad):
    with pytest.raises(InvalidInputError):
        suspension_forces(P, HalfCarState(x1=bad), DamperControl(300.0, 300.0), RoadPoint())
    with pytest.raises(InvalidInputError):
        dynamics_rhs(P, HalfCarState(), (300.0, 300.0), RoadPoint(w1dot=bad))
    with pytest.raises(InvalidInputError):
        HalfCarParams(k1=bad)


def test_control_outside_damper_range_is_rejected():
    with pytest.raises(InvalidInputError):
        DamperControl(100.0, 300.0)
