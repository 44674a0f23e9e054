import math

import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings, strategies as st

from toolskill import envsim
from toolskill.envsim import (
    Action,
    ContactWrench,
    EnvironmentSpec,
    ToolSpec,
    WorldState,
    reset_world,
    step_world,
    surface_height,
)
from toolskill.errors import DomainError, InputError

TOOL = ToolSpec()


def make_state(tip_z, x=1.0, shift=0.0):
    """WorldState with the (undeformed) tip bottom at the given height."""
    return WorldState(ee_x=x, ee_z=tip_z + envsim.tip_drop(TOOL, shift), grasp_shift=shift)


# ---- surface_height ----------------------------------------------------------

def test_flat_inclined_is_zero_everywhere():
    env = EnvironmentSpec(kind="inclined", inclination=0.0)
    for x in (0.0, 1.0, 7.3, 12.0):
        assert surface_height(env, x) == 0.0


def test_step_height_after_step():
    env = EnvironmentSpec(kind="step", step_height=2.0, step_x=2.0)
    assert surface_height(env, 1.99) == 0.0
    assert surface_height(env, 2.01) == 2.0
    assert surface_height(env, 2.0) == 2.0


def test_inclined_matches_high_precision_tangent():
    # oracle: 50-digit tangent via mpmath
    import mpmath

    mpmath.mp.dps = 50
    env = EnvironmentSpec(kind="inclined", inclination=0.25)
    expected = float(mpmath.mpf(10) * mpmath.tan(mpmath.mpf("0.25")))
    npt.assert_allclose(surface_height(env, 10.0), expected, rtol=1e-14)


def test_stairs_profile():
    env = EnvironmentSpec(kind="stairs", stair_count=3, stair_rise=0.4, stair_run=0.7)
    assert surface_height(env, 0.3) == 0.0
    npt.assert_allclose(surface_height(env, 0.71), 0.4)
    npt.assert_allclose(surface_height(env, 1.5), 0.8)
    # capped at stair_count rises
    npt.assert_allclose(surface_height(env, 11.9), 3 * 0.4)


def test_surface_height_domain_error():
    env = EnvironmentSpec(kind="inclined", inclination=0.1)
    with pytest.raises(DomainError):
        surface_height(env, -0.1)
    with pytest.raises(DomainError):
        surface_height(env, env.extent_x + 0.1)


def test_spec_validation():
    with pytest.raises(DomainError):
        EnvironmentSpec(kind="inclined", inclination=0.4)
    with pytest.raises(DomainError):
        EnvironmentSpec(kind="step", step_height=6.0)
    with pytest.raises(DomainError):
        ToolSpec(friction_mu=3.0)
    with pytest.raises(DomainError):
        ToolSpec(handle_length=-1.0)


# ---- step_world --------------------------------------------------------------

def test_no_contact_zero_wrench():
    env = EnvironmentSpec(kind="inclined", inclination=0.0)
    state = make_state(tip_z=1.0)
    _, wrench = step_world(state, env, TOOL, Action(0.0, 0.0))
    assert wrench.f_x == 0.0 and wrench.f_z == 0.0


def test_linear_spring_law():
    env = EnvironmentSpec(kind="inclined", inclination=0.0)
    tool = ToolSpec(friction_mu=0.0)
    # after the zero-action step the tip sits exactly 0.01 below the surface
    state = make_state(tip_z=-0.01)
    _, wrench = step_world(state, env, tool, Action(0.0, 0.0))
    npt.assert_allclose(wrench.f_z, 0.3, rtol=1e-12)
    assert wrench.f_x == 0.0


def test_friction_proportional_to_normal():
    env = EnvironmentSpec(kind="inclined", inclination=0.0)
    state = make_state(tip_z=-0.01)
    _, wrench = step_world(state, env, TOOL, Action(0.0, 0.0))
    npt.assert_allclose(wrench.f_x, TOOL.friction_mu * wrench.f_z, rtol=1e-12)


def test_normal_force_saturation():
    env = EnvironmentSpec(kind="inclined", inclination=0.0)
    state = make_state(tip_z=-1.0)
    _, wrench = step_world(state, env, TOOL, Action(0.0, 0.0), f_max=5.0)
    assert wrench.f_z == 5.0


def test_nan_action_rejected():
    env = EnvironmentSpec(kind="inclined", inclination=0.0)
    with pytest.raises(InputError):
        step_world(make_state(1.0), env, TOOL, Action(float("nan"), 0.0))


def test_step_world_deterministic():
    env = EnvironmentSpec(kind="step", step_height=1.0)
    s0 = make_state(tip_z=0.2, x=1.5)
    a = Action(0.3, -0.1)
    r1 = step_world(s0, env, TOOL, a)
    r2 = step_world(make_state(tip_z=0.2, x=1.5), env, TOOL, a)
    assert r1[1] == r2[1]
    assert r1[0].ee_x == r2[0].ee_x and r1[0].ee_z == r2[0].ee_z


def test_euler_constant_velocity_exact():
    env = EnvironmentSpec(kind="inclined", inclination=0.0)
    state = make_state(tip_z=5.0, x=0.5)
    u = Action(0.3, 0.0)
    n = 200
    for _ in range(n):
        state, _ = step_world(state, env, TOOL, u)
    npt.assert_allclose(state.ee_x, 0.5 + n * envsim.DT * 0.3, rtol=1e-12)
    npt.assert_allclose(state.t, n * envsim.DT, rtol=1e-12)


def test_wall_force_crossing_time_matches_fine_oracle():
    """Drive the tip into a step face; the tangential force must cross the
    0.5 N wall threshold, and the crossing time must agree with a brute-force
    fine-timestep simulation to within one coarse control period."""
    env = EnvironmentSpec(kind="step", step_height=2.0, step_x=2.0)
    u = Action(0.3, 0.0)

    def crossing_time(dt):
        tip_z = 0.05  # sliding just above the base surface, below the face top
        tip_x = 1.5
        t = 0.0
        for _ in range(int(20.0 / dt)):
            tip_x += dt * u.u_x
            t += dt
            f_z = TOOL.tip_stiffness * max(0.0, surface_height(env, tip_x) - tip_z)
            f_x = TOOL.friction_mu * f_z
            lead = tip_x + TOOL.tip_width / 2
            if lead > env.step_x and tip_x - TOOL.tip_width / 2 < env.step_x and tip_z < env.step_height:
                f_x += TOOL.tip_stiffness * (lead - env.step_x)
            if f_x > 0.5:
                return t
        raise AssertionError("never crossed the wall threshold")

    fine = crossing_time(envsim.DT / 50)

    state = make_state(tip_z=0.05, x=1.5)
    t_coarse = None
    for i in range(400):
        state, wrench = step_world(state, env, TOOL, u)
        if wrench.f_x > 0.5:
            t_coarse = state.t
            break
    assert t_coarse is not None
    assert abs(t_coarse - fine) <= envsim.DT + 1e-9


@settings(max_examples=60, deadline=None)
@given(
    tip_z=st.floats(-0.2, 0.5),
    u_z=st.floats(-0.5, 0.5),
)
def test_contact_complementarity(tip_z, u_z):
    env = EnvironmentSpec(kind="inclined", inclination=0.0)
    state = make_state(tip_z=tip_z)
    new, wrench = step_world(state, env, TOOL, Action(0.1, u_z))
    if new.tip_compression == 0.0:
        assert wrench.f_z == 0.0
    else:
        assert wrench.f_z > 0.0
    assert new.tip_compression >= 0.0
    assert new.t > state.t


# ---- deforming surfaces ------------------------------------------------------

def test_deforming_surface_drops_and_is_monotone():
    env = EnvironmentSpec(kind="deforming", deform_drop=0.05)
    state = reset_world(env, TOOL, seed=3)
    heights = []
    probe = 1.0
    for i in range(200):
        action = Action(0.3, -0.5 if i < 30 else 0.0)
        state, _ = step_world(state, env, TOOL, action)
        heights.append(surface_height(env, probe, state))
    diffs = np.diff(heights)
    assert np.all(diffs <= 1e-12)
    assert heights[-1] < 0.0  # the pass actually wore the surface down


# ---- reset_world -------------------------------------------------------------

def test_reset_deterministic():
    env = EnvironmentSpec(kind="inclined", inclination=0.1)
    a = reset_world(env, TOOL, seed=42)
    b = reset_world(env, TOOL, seed=42)
    assert (a.ee_x, a.ee_z, a.grasp_shift) == (b.ee_x, b.ee_z, b.grasp_shift)


def test_grasp_shift_clamped_to_handle():
    env = EnvironmentSpec(kind="inclined", inclination=0.0)
    for seed in range(300):
        s = reset_world(env, TOOL, seed=seed)
        assert abs(s.grasp_shift) <= TOOL.handle_length / 2 + 1e-12


def test_grasp_shift_moments_match_clamped_normal():
    """Monte-Carlo check of the grasp-shift distribution against the analytic
    moments of a unit normal clamped to half the handle length."""
    from scipy.stats import norm

    a = TOOL.handle_length / 2
    # E[X^2] of clip(N(0,1), -a, a): interior part plus the two point masses
    interior = 1.0 - 2.0 * a * norm.pdf(a) - 2.0 * norm.cdf(-a)
    expected_var = interior + 2.0 * a * a * norm.cdf(-a)
    env = EnvironmentSpec(kind="inclined", inclination=0.0)
    shifts = np.array([reset_world(env, TOOL, seed=s).grasp_shift for s in range(10_000)])
    assert abs(shifts.mean()) < 0.05
    npt.assert_allclose(shifts.std(), math.sqrt(expected_var), atol=0.02)


def test_tip_starts_above_surface():
    env = EnvironmentSpec(kind="inclined", inclination=0.2)
    s = reset_world(env, TOOL, seed=1, start_x=0.5, start_clearance=0.5)
    tip_z = s.ee_z - envsim.tip_drop(TOOL, s.grasp_shift)
    npt.assert_allclose(tip_z - surface_height(env, s.ee_x), 0.5, rtol=1e-12)
