import math

import numpy as np
import pytest

from ccmanip.anticipation import (IMPACT, IMPACT_LESS, AnticipationStore, ContactEstimate, ImpactModel,
                                  impact_force, kf_predict, kf_update, region_of, update_approach_velocity)
from ccmanip.plan import ArcPath, LinePath
from ccmanip.sim import ContactObservation
from conftest import random_spd


def scalar_kalman(m, P, z, R):
    k = P / (P + R)
    return m + k * (z - m), (1 - k) * P


def test_predict_adds_process_noise():
    e = ContactEstimate(np.zeros(3), 0.04)
    same = kf_predict(e, 0.0)
    np.testing.assert_array_equal(same.covariance, e.covariance)
    grown = kf_predict(e, 0.01)
    assert grown.trace == pytest.approx(e.trace + 3 * 0.01)
    traces = [e.trace]
    for _ in range(5):
        e = kf_predict(e, 1e-3)
        traces.append(e.trace)
    assert np.all(np.diff(traces) > 0)


def test_update_matches_scalar_closed_form():
    e = ContactEstimate(np.full(3, 0.12), 0.3 ** 2)
    post = kf_update(e, np.zeros(3), 0.01 ** 2)
    m, P = scalar_kalman(0.12, 0.09, 0.0, 1e-4)
    np.testing.assert_allclose(post.mean, m, rtol=1e-12)
    np.testing.assert_allclose(np.diag(post.covariance), P, rtol=1e-12)
    assert np.all(np.abs(post.mean) < 0.01) and math.sqrt(P) < 0.05


def test_update_limits():
    e = ContactEstimate(np.array([0.1, 0.2]), 0.04)
    vague = kf_update(e, np.array([5.0, 5.0]), 1e12)
    np.testing.assert_allclose(vague.mean, e.mean, atol=1e-9)
    np.testing.assert_allclose(vague.covariance, e.covariance, atol=1e-12)
    dogmatic = ContactEstimate(np.array([0.1, 0.2]), 1e-14)
    post = kf_update(dogmatic, np.array([5.0, 5.0]), 0.01)
    np.testing.assert_allclose(post.mean, dogmatic.mean, atol=1e-9)


def test_update_accepts_observation_objects():
    e = ContactEstimate(np.zeros(2), 1.0)
    obs = ContactObservation(np.array([1.0, 0.0]), np.array([1.0, 0.0]), 5.0, "impact")
    post = kf_update(e, obs, 1.0)
    np.testing.assert_allclose(post.mean, [0.5, 0.0])


def test_update_full_matrices_against_textbook(rng):
    P, R = random_spd(rng, 3), random_spd(rng, 3)
    m, z = rng.normal(size=3), rng.normal(size=3)
    post = kf_update(ContactEstimate(m, P), z, R)
    K = P @ np.linalg.inv(P + R)
    np.testing.assert_allclose(post.mean, m + K @ (z - m), atol=1e-12)
    np.testing.assert_allclose(post.covariance, (np.eye(3) - K) @ P, atol=1e-12)
    assert post.trace < np.trace(P)


def test_rejects_non_spd():
    with pytest.raises(ValueError):
        ContactEstimate(np.zeros(2), np.array([[1.0, 2.0], [2.0, 1.0]]))
    with pytest.raises(ValueError):
        kf_update(ContactEstimate(np.zeros(2), 1.0), np.zeros(2), np.array([[1.0, 0.0], [1.0, 1.0]]))
    with pytest.raises(ValueError):
        ContactEstimate(np.zeros(2), 1.0, transition_type="bump")


def test_region_chord_through_center():
    e = ContactEstimate(np.array([0.5, 0.0]), 0.05 ** 2)
    path = LinePath([0.0, 0.0], [1.0, 0.0])
    r = region_of(e, path, 2.0)
    assert r.length == pytest.approx(2 * 2.0 * 0.05, abs=1e-12)
    np.testing.assert_allclose(r.entry, [0.4, 0.0], atol=1e-12)
    assert r.s_entry < r.s_mean < r.s_exit and r.contains(0.5)
    shrunk = kf_update(e, np.array([0.5, 0.0]), 0.05 ** 2)
    assert region_of(shrunk, path, 2.0).length < r.length
    point = region_of(e, path, 0.0)
    assert point.length == pytest.approx(0.0, abs=1e-12)


def test_region_misses_and_clips():
    e = ContactEstimate(np.array([0.5, 1.0]), 0.01)
    assert region_of(e, LinePath([0.0, 0.0], [1.0, 0.0]), 2.0) is None
    e = ContactEstimate(np.array([0.0, 0.0]), 0.01)
    r = region_of(e, LinePath([0.0, 0.0], [1.0, 0.0]), 2.0)
    assert r.s_entry == 0.0 and r.s_exit == pytest.approx(0.2)
    assert region_of(e, LinePath([0.0, 0.0], [1.0, 0.0]), 2.0, clip=False).s_entry == pytest.approx(-0.2)
    with pytest.raises(ValueError):
        region_of(e, LinePath([0.0, 0.0], [1.0, 0.0]), -1.0)


def test_arc_region_matches_geometry():
    # circle of radius 1 about the origin, ball of radius 0.2 at (1, 0): chord angle 2 asin(0.1)
    arc = ArcPath(np.zeros(2), 1.0, -1.0, 2.0)
    e = ContactEstimate(np.array([1.0, 0.0]), 0.1 ** 2)
    r = region_of(e, arc, 2.0, resolution=1e-5)
    assert r.length == pytest.approx(4 * math.asin(0.1), abs=3e-5)


def test_eq7_arithmetic_and_fixed_point():
    m = ImpactModel(0.05, 0.002, 0.15, use_fit=False)
    assert update_approach_velocity(m, 8.0, 8.0).v_a == pytest.approx(0.05)
    assert update_approach_velocity(m, 8.0, 10.0).v_a == pytest.approx(0.05 - 0.004)
    assert update_approach_velocity(m, 8.0, -1e6).v_a == 0.15
    assert update_approach_velocity(m, 8.0, 1e6).v_a == m.v_min
    with pytest.raises(ValueError):
        update_approach_velocity(m, 0.0, 1.0)
    with pytest.raises(ValueError):
        ImpactModel(0.2, 0.002, 0.15)


def test_fit_inversion():
    m = ImpactModel(0.05, 0.002, 0.5)
    world = lambda v: 70.0 * v + 1.0
    m = update_approach_velocity(m, 8.0, world(m.v_a))
    assert m.fit() is None
    m = update_approach_velocity(m, 8.0, world(m.v_a))
    slope, icpt = m.fit()
    assert slope == pytest.approx(70.0) and icpt == pytest.approx(1.0)
    assert m.v_a == pytest.approx(0.1)


@pytest.mark.parametrize("slope", [40.0, 70.0, 120.0])
def test_eq7_contracts_below_inverse_slope(slope):
    world = lambda v: slope * v + 0.5
    v_star = (8.0 - 0.5) / slope
    for beta in (0.25 / slope, 0.5 / slope, 0.99 / slope):
        m = ImpactModel(0.05, beta, 1.0, use_fit=False)
        errs = [abs(m.v_a - v_star)]
        for _ in range(30):
            m = update_approach_velocity(m, 8.0, world(m.v_a))
            errs.append(abs(m.v_a - v_star))
        assert np.all(np.diff(errs) <= 1e-15)
        assert errs[-1] < 0.5 * errs[0]


def test_impact_force_subtracts_baseline():
    f = np.concatenate([np.full(20, 1.0), [3.0, 9.0, 6.0, 2.0], np.full(10, 1.0)])
    assert impact_force(f, 20, 5, 10) == pytest.approx(8.0)
    assert impact_force(f, 20, 5, 0) == pytest.approx(9.0)
    assert impact_force(f, 100, 5) == 0.0


def test_store_round_trip(tmp_path):
    store = AnticipationStore([ContactEstimate(np.array([0.1, 0.2]), 0.01, IMPACT, 1, "w"),
                               ContactEstimate(np.array([0.5, 0.0]), 0.04, IMPACT_LESS, 0)],
                              {0: ImpactModel(0.05, 0.002, 0.15, speeds=[0.05], forces=[3.0])})
    store.save(tmp_path / "s.json")
    back = AnticipationStore.load(tmp_path / "s.json")
    assert back.to_dict() == store.to_dict()
    assert back.nearest([0.4, 0.0]) == 1
    assert back.nearest([0.4, 0.0], kind=IMPACT) == 0
    assert back.nearest([0.4, 0.0], anchor=5) is None
