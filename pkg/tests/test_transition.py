import math

import mpmath
import numpy as np
import pytest

from ccmanip.anticipation import IMPACT, IMPACT_LESS, ImpactModel, TransitionRegion
from ccmanip.controller import GainConfig
from ccmanip.plan import LinePath, MotionPlan, PlanSegment
from ccmanip.profile import SpeedSchedule, VelocityProfileParams, blend_weight, profile_distance, velocity_profile
from ccmanip.transition import (BlendSchedule, TransitionConfig, blend, deceleration_start, retime_plan,
                                transition_gains)

mpmath.mp.dps = 40
G = GainConfig([100.0, 100.0, 1.0], [2000.0, 2000.0, 10.0])


def profile_oracle(v1, v2, tau):
    """The bump-weighted speed, written literally in extended precision."""
    if tau <= 0:
        return v1
    if tau >= 1:
        return v2
    tau = mpmath.mpf(tau)
    a, b = mpmath.exp(-1 / tau), mpmath.exp(-1 / (1 - tau))
    return float(v1 + (v2 - v1) * a / (a + b))


def test_transition_gains_policies():
    tg = transition_gains(IMPACT_LESS, G)
    np.testing.assert_array_equal(tg.kp, G.kp_max)
    assert tg.target_speed is None
    im = ImpactModel(0.04, 0.002, 0.15)
    tg = transition_gains(IMPACT, G, impact=im)
    assert tg.target_speed == 0.04
    np.testing.assert_array_equal(tg.kp, 0.5 * G.kp_free)
    tg = transition_gains(IMPACT, G, TransitionConfig(kp_low=G.kp_free), impact=im)
    np.testing.assert_array_equal(tg.kp, G.kp_free)
    np.testing.assert_allclose(tg.kd, np.sqrt(G.kp_free / 4))
    with pytest.raises(ValueError):
        transition_gains("slide", G)


def test_blend_endpoints_and_midpoint():
    u1, u2 = np.array([1.0, -2.0, 3.0]), np.array([5.0, 0.0, -1.0])
    np.testing.assert_array_equal(blend(u1, u2, 0.0, 2.0), u1)
    np.testing.assert_array_equal(blend(u1, u2, 2.0, 2.0), u2)
    np.testing.assert_array_equal(blend(u1, u2, 7.0, 2.0), u2)
    np.testing.assert_allclose(blend(u1, u2, 1.0, 2.0), 0.5 * (u1 + u2), rtol=1e-15)
    with pytest.raises(ValueError):
        blend(u1, u2, 0.0, 0.0)


def test_blend_schedule():
    b = BlendSchedule(1.0, 0.5)
    assert b.alpha(0.5) == 0.0 and b.alpha(1.25) == 0.5 and b.alpha(3.0) == 1.0
    assert b.done(1.5) and not b.done(1.49)
    assert BlendSchedule(1.0, 0.5, rising=False).alpha(1.125) == pytest.approx(0.75)


def test_profile_midpoint_and_clamps():
    p = VelocityProfileParams(1.2, 0.5)
    assert abs(velocity_profile(p, 0.5) - 0.85) <= 1e-12
    assert velocity_profile(p, -0.1) == 1.2 and velocity_profile(p, 1.3) == 0.5
    q = VelocityProfileParams(0.3, 0.9, 2.0, 6.0)
    assert abs(velocity_profile(q, 4.0) - 0.6) <= 1e-12
    with pytest.raises(ValueError):
        VelocityProfileParams(1.0, 1.0, 1.0, 1.0)


def test_golden_series_unit_time():
    p = VelocityProfileParams(1.2, 0.5)
    taus = np.linspace(0.0, 1.0, 41)
    got = np.array([velocity_profile(p, t) for t in taus])
    want = np.array([profile_oracle(1.2, 0.5, t) for t in taus])
    np.testing.assert_allclose(got, want, atol=1e-12, rtol=0)
    assert got[0] == 1.2 and got[-1] == 0.5
    assert np.all(np.diff(got) <= 0)


@pytest.mark.parametrize("h", [1e-2, 5e-3])
def test_boundary_derivatives_vanish(h):
    p = VelocityProfileParams(1.2, 0.5)
    v = lambda t: velocity_profile(p, t)
    for edge, sgn in ((0.0, 1.0), (1.0, -1.0)):
        pts = [v(edge + sgn * k * h) for k in range(4)]
        d1 = (pts[1] - pts[0]) / h
        d2 = (pts[2] - 2 * pts[1] + pts[0]) / h ** 2
        d3 = (pts[3] - 3 * pts[2] + 3 * pts[1] - pts[0]) / h ** 3
        assert max(abs(d1), abs(d2), abs(d3)) < 1e-6
        # continuity from outside
        assert abs(v(edge - sgn * 1e-9) - pts[0]) < 1e-12


def test_blend_weight_symmetry():
    for t in np.linspace(0.01, 0.99, 25):
        assert blend_weight(t) + blend_weight(1 - t) == pytest.approx(1.0, abs=1e-14)
    assert blend_weight(1e-4) == 0.0


def test_profile_distance_against_quadrature():
    exact = float(mpmath.quad(lambda t: profile_oracle(0.05, 0.02, t / 2.0), [0, 1, 2]))
    assert profile_distance(0.05, 0.02, 2.0) == pytest.approx(exact, abs=1e-12)
    assert profile_distance(0.05, 0.02, 2.0, dt=0.001) == pytest.approx(exact, abs=1e-9)


def test_speed_schedule_takes_over_mid_transition():
    sch = SpeedSchedule(1.0)
    sch.add(0.0, 1.0, 0.0)
    v_mid = sch.speed(0.5)
    sch.add(0.5, 1.0, 2.0)
    assert sch.speed(0.5) == pytest.approx(v_mid)
    assert sch.speed(1.5) == 2.0 and sch.final_speed() == 2.0


def test_deceleration_start_fits_or_compresses():
    s, T = deceleration_start(0.1, 0.05, 0.02, 1.0)
    assert s == pytest.approx(0.1 - 0.035) and T == 1.0
    s, T = deceleration_start(0.01, 0.05, 0.02, 1.0)
    assert s == 0.0 and T == pytest.approx(2 * 0.01 / 0.07)


def two_segment_plan(v=0.05):
    lead = PlanSegment(LinePath([-0.05, 0.0], [0.0, 0.0]), v, start_from_rest=True)
    main = PlanSegment(LinePath([0.0, 0.0], [0.3, 0.0]), v)
    return MotionPlan([lead, main])


def arrival(samples, seg, s):
    idx = np.nonzero((samples.segment == seg) & (samples.arc >= s - 1e-12))[0][0]
    return samples.time[idx]


def test_retime_unchanged_when_speeds_equal():
    plan = two_segment_plan()
    region = TransitionRegion(1, 0.1, 0.2, np.array([0.1, 0.0]), np.array([0.2, 0.0]), 0.15, IMPACT)
    a, b = plan.sample(0.001), retime_plan(plan, region, 0.05, 1.0, 0.001)
    np.testing.assert_array_equal(a.position, b.position)
    np.testing.assert_array_equal(a.time, b.time)


def test_retime_delay_matches_quadrature():
    dt, v1, v2, T = 0.001, 0.05, 0.02, 1.0
    plan = two_segment_plan(v1)
    region = TransitionRegion(1, 0.1, 0.2, np.array([0.1, 0.0]), np.array([0.2, 0.0]), 0.15, IMPACT)
    base, slow = plan.sample(dt), retime_plan(plan, region, v2, T, dt)
    d = float(mpmath.quad(lambda t: profile_oracle(v1, v2, t / T), [0, T]))
    expected = T - d / v1
    delay = arrival(slow, 1, 0.1) - arrival(base, 1, 0.1)
    assert delay == pytest.approx(expected, abs=2 * dt)
    # speed at the region entry is the reduced speed
    idx = np.nonzero((slow.segment == 1) & (slow.arc >= 0.1))[0][0]
    assert np.linalg.norm(slow.velocity[idx]) == pytest.approx(v2, abs=1e-6)
    # path invariance: every retimed point lies on the original line
    np.testing.assert_allclose(slow.position[:, 1], 0.0)
    assert slow.position[:, 0].min() >= -0.05 - 1e-12 and slow.position[:, 0].max() <= 0.3 + 1e-12


def test_shorter_region_means_less_slow_time():
    dt, v1, v2, T = 0.001, 0.05, 0.02, 0.5
    plan = two_segment_plan(v1)

    def slow_time(s0, s1):
        region = TransitionRegion(1, s0, s1, np.array([s0, 0.0]), np.array([s1, 0.0]), 0.5 * (s0 + s1), IMPACT)
        smp = retime_plan(plan, region, v2, T, dt, restore_at=s1)
        speed = np.linalg.norm(smp.velocity, axis=1)
        return np.count_nonzero((smp.segment == 1) & (speed < v1 - 1e-9)) * dt

    times = [slow_time(0.1, 0.2), slow_time(0.12, 0.18), slow_time(0.14, 0.16)]
    assert times[0] > times[1] > times[2]
