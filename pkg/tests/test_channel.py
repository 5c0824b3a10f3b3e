import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import RADAR_VAR_AT_200M, RATE_ABOVE_USER
from uavisac.channel import avg_rate, comm_rate, comm_rates, radar_link
from uavisac.trajectory import Trajectory

coord = st.floats(-3000, 3000, allow_nan=False)


def test_rate_directly_above_user(scenario):
    sample = comm_rate(scenario.user, scenario)
    assert sample.snr == pytest.approx(2500.0, rel=1e-12)
    assert sample.rate == pytest.approx(RATE_ABOVE_USER, rel=1e-12)
    assert sample.distance == pytest.approx(200.0)


def test_rate_decays_to_zero(scenario):
    dists = [0, 10, 100, 1e3, 1e4, 1e6]
    rates = [comm_rate((scenario.user[0] + d, scenario.user[1]), scenario).rate for d in dists]
    assert all(a > b for a, b in zip(rates, rates[1:]))
    assert rates[-1] < 1e-3 * rates[0]


@given(st.floats(0, 2 * math.pi), st.floats(0, 2 * math.pi), st.floats(0, 2000))
def test_rate_radially_symmetric(scenario, a1, a2, r):
    u = np.asarray(scenario.user)
    p1 = u + r * np.array([math.cos(a1), math.sin(a1)])
    p2 = u + r * np.array([math.cos(a2), math.sin(a2)])
    assert comm_rate(p1, scenario).rate == pytest.approx(comm_rate(p2, scenario).rate, rel=1e-12)


@given(st.floats(0, 3000), st.floats(1e-3, 500))
def test_rate_strictly_decreasing_in_distance(scenario, r, dr):
    u = np.asarray(scenario.user)
    near = comm_rate(u + [r, 0.0], scenario)
    far = comm_rate(u + [r + dr, 0.0], scenario)
    assert far.rate < near.rate
    assert near.distance >= scenario.sys.altitude and near.snr > 0 and near.rate > 0


def test_avg_rate_small_cases(scenario):
    p = (300.0, 900.0)
    assert avg_rate([p], scenario) == pytest.approx(comm_rate(p, scenario).rate, rel=1e-14)
    assert avg_rate([p] * 7, scenario) == pytest.approx(comm_rate(p, scenario).rate, rel=1e-14)
    q = (1000.0, 100.0)
    r1 = 1e6 * math.log2(1 + 2500 * 200**2 / (200**2 + (300 - 1200) ** 2 + (900 - 400) ** 2))
    r2 = 1e6 * math.log2(1 + 2500 * 200**2 / (200**2 + (1000 - 1200) ** 2 + (100 - 400) ** 2))
    assert avg_rate([p, q], scenario) == pytest.approx((r1 + r2) / 2, rel=1e-12)


def test_avg_rate_pools_stages(scenario):
    a = np.array([[0.0, 0.0], [10.0, 0.0]])
    b = np.array([[500.0, 500.0], [600.0, 400.0], [700.0, 300.0]])
    pooled = avg_rate([a, b], scenario)
    assert pooled == pytest.approx(np.mean(comm_rates(np.vstack([a, b]), scenario)), rel=1e-14)
    traj = Trajectory.from_waypoints((0, 0), np.vstack([a, b]), 1.5)
    assert avg_rate(traj, scenario) == pytest.approx(pooled, rel=1e-14)


def test_avg_rate_empty_is_error(scenario):
    with pytest.raises(ValueError):
        avg_rate(np.zeros((0, 2)), scenario)


@given(st.lists(st.tuples(coord, coord), min_size=1, max_size=12), st.randoms(use_true_random=False))
def test_avg_rate_permutation_invariant(scenario, pts, rnd):
    shuffled = list(pts)
    rnd.shuffle(shuffled)
    assert avg_rate(shuffled, scenario) == pytest.approx(avg_rate(pts, scenario), rel=1e-12)


def test_radar_variance_at_altitude(scenario):
    link = radar_link(scenario.target_true, scenario.target_true, scenario)
    assert link.distance == pytest.approx(200.0)
    assert link.meas_var == pytest.approx(RADAR_VAR_AT_200M, rel=1e-12)


def test_radar_variance_linear_in_a_and_quartic_in_distance(scenario):
    t = np.asarray(scenario.target_true)
    h = t + [300.0, 400.0]  # planar 500, slant sqrt(500^2 + 200^2)
    base = radar_link(h, t, scenario).meas_var
    assert radar_link(h, t, scenario.replace(sys={"a": 50.0})).meas_var / base == pytest.approx(5.0, rel=1e-14)
    sc0 = scenario.replace(sys={"altitude": 100.0})
    near = radar_link(t, t, sc0)
    two = radar_link(t + [math.sqrt(3) * 100.0, 0.0], t, sc0)  # slant range 200, twice the altitude
    assert two.distance == pytest.approx(200.0)
    assert two.meas_var / near.meas_var == pytest.approx(16.0, rel=1e-12)


@given(st.tuples(coord, coord), st.tuples(coord, coord))
def test_variance_times_snr_constant(scenario, h, t):
    link = radar_link(h, t, scenario)
    assert link.meas_var * link.snr == pytest.approx(scenario.sys.a, rel=1e-12)
    assert link.distance >= scenario.sys.altitude and link.meas_var > 0


@given(st.floats(0, 3000), st.floats(1e-2, 500))
def test_variance_increasing_in_distance(scenario, r, dr):
    t = np.asarray(scenario.target_true)
    assert radar_link(t + [r + dr, 0], t, scenario).meas_var > radar_link(t + [r, 0], t, scenario).meas_var
