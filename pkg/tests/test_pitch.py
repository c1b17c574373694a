import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import ramp_world, small_trip
from roadgrade import synth
from roadgrade.pitch import (
    PitchSource,
    accel_pitch_series,
    estimate_gravity,
    lateral_accel,
    longitudinal_accel,
    pitch_accel,
    pitch_gyro,
)
from roadgrade.preprocess import AlignedTrip, FilterSpec, segment_slice

DT = 0.005
SPEC = FilterSpec(2.0, 1 / DT)
I3 = np.eye(3)
CRUISE_A = 1e-3  # m/s^2, settled cruise


def _gyro_trip(omega_x, dt=DT, v=None):
    n = omega_x.size
    gyro = np.zeros((n, 3))
    gyro[:, 0] = omega_x
    v = np.full(n, 10.0) if v is None else v
    t = np.arange(n) * dt
    return AlignedTrip("g", t, np.zeros((n, 3)), gyro, v, 10.0 * t)


def test_zero_rate_keeps_initial_grade():
    p = pitch_gyro(_gyro_trip(np.zeros(500)), I3, theta0=1.0)
    assert p.source is PitchSource.GYRO
    assert np.all(p.theta == 1.0)


def test_one_degree_per_second_for_ten_seconds():
    n = int(round(10 / DT)) + 1
    p = pitch_gyro(_gyro_trip(np.full(n, np.radians(1.0))), I3)
    assert p.theta[-1] == pytest.approx(10.0, abs=1e-6)


def test_constant_bias_accumulates_six_degrees_in_thirty_seconds():
    n = int(round(30 / DT)) + 1
    p = pitch_gyro(_gyro_trip(np.full(n, np.radians(-0.2))), I3)
    assert p.theta[-1] == pytest.approx(-6.0, abs=0.1)


def test_hold_drops_increments_at_rest():
    n = 400
    v = np.where(np.arange(n) < 200, 0.0, 5.0)
    p = pitch_gyro(_gyro_trip(np.full(n, 0.01), v=v), I3, hold_below_speed=0.1)
    assert np.all(p.theta[:200] == 0.0)
    assert p.theta[-1] > 0


@settings(max_examples=40, deadline=None)
@given(
    w1=arrays(float, 60, elements=st.floats(-1, 1, allow_nan=False)),
    w2=arrays(float, 60, elements=st.floats(-1, 1, allow_nan=False)),
    theta0=st.floats(-10, 10),
)
def test_gyro_integration_is_linear(w1, w2, theta0):
    a = pitch_gyro(_gyro_trip(w1), I3, theta0).theta
    b = pitch_gyro(_gyro_trip(w2), I3, theta0).theta
    ab = pitch_gyro(_gyro_trip(w1 + w2), I3, theta0).theta
    np.testing.assert_allclose(ab, a + b - theta0, atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(w=arrays(float, st.integers(2, 80), elements=st.floats(-1, 1, allow_nan=False)))
def test_reversed_trip_negates_increments(w):
    # the rate at tick k covers the interval ending at k; driving the same
    # intervals backward reverses their order and flips the rotation sense
    rev = np.concatenate(([0.0], -w[1:][::-1]))
    fwd = np.diff(pitch_gyro(_gyro_trip(w), I3).theta)
    back = np.diff(pitch_gyro(_gyro_trip(rev), I3).theta)
    np.testing.assert_allclose(back, -fwd[::-1], atol=1e-12)


def test_constant_speed_has_zero_longitudinal_accel():
    a = longitudinal_accel(np.full(1000, 12.0), DT, [0, 1, 0], SPEC)
    np.testing.assert_allclose(a, 0.0, atol=1e-9)


def _speed_ramp():
    t = np.arange(0, 30, DT)
    return t, np.interp(t, [0, 10, 20, 30], [0, 0, 10, 10])


def test_speed_ramp_gives_one_meter_per_second_squared():
    t, v = _speed_ramp()
    a = longitudinal_accel(v, DT, [0, 1, 0], SPEC)
    mag = np.linalg.norm(a, axis=1)
    inner = (t > 11.0) & (t < 19.0)
    np.testing.assert_allclose(mag[inner], 1.0, rtol=0.02)
    np.testing.assert_allclose(a[inner][:, [0, 2]], 0.0)


def test_noisy_speed_derivative_error_is_small():
    t, v = _speed_ramp()
    truth = np.gradient(v, DT)
    noisy = v + 0.1 * np.random.default_rng(0).standard_normal(v.size)
    a = longitudinal_accel(noisy, DT, [0, 1, 0], SPEC)[:, 1]
    inner = (t > 2) & (t < 28)
    err = a[inner] - truth[inner]
    assert np.sqrt(np.mean(err**2)) < 0.15


def test_lateral_accel_examples():
    assert np.all(lateral_accel(np.full(10, 15.0), np.zeros(10), [1, 0, 0]) == 0)
    lat = lateral_accel(np.full(10, 10.0), np.full(10, 0.1), [1, 0, 0])
    np.testing.assert_allclose(np.linalg.norm(lat, axis=1), 1.0)


def test_constant_radius_turn_matches_circular_motion():
    r = 80.0
    spec = synth.WorldSpec((synth.SegmentSpec("a", 700.0),), curves=(synth.Curve(300.0, 500.0, 1 / r),), elevation_noise_sigma=0.0)
    st_ = small_trip(spec)
    sl = segment_slice(st_.trip, st_.world.route)[0]
    lat = lateral_accel(sl.v, sl.gyro @ st_.R[:, 2], st_.R[:, 0])
    inside = (sl.s > 320) & (sl.s < 480)
    np.testing.assert_allclose(np.linalg.norm(lat[inside], axis=1), sl.v[inside] ** 2 / r, rtol=0.03)


def test_stationary_gravity_is_measured_accel():
    n = 100
    accel = np.tile([0.3, -0.2, 9.8], (n, 1))
    trip = AlignedTrip("s", np.arange(n) * DT, accel, np.zeros((n, 3)), np.zeros(n), np.zeros(n))
    G = estimate_gravity(trip, I3, np.zeros((n, 3)), np.zeros((n, 3)))
    np.testing.assert_array_equal(G, accel)


def _ticks(st_, sl):
    """Indices into the truth arrays for each tick of ``sl``."""
    return np.searchsorted(st_.sim.truth.t, sl.t)


def test_flat_constant_speed_gravity_magnitude():
    st_ = small_trip(synth.WorldSpec((synth.SegmentSpec("a", 600.0),), elevation_noise_sigma=0.0))
    sl = segment_slice(st_.trip, st_.world.route)[0]
    R = st_.R
    a = longitudinal_accel(sl.v, sl.dt, R[:, 1], SPEC)
    G = estimate_gravity(sl, R, a, lateral_accel(sl.v, sl.gyro @ R[:, 2], R[:, 0]))
    cruise = np.abs(st_.sim.truth.a[_ticks(st_, sl)]) < CRUISE_A
    assert cruise.sum() > 1000
    np.testing.assert_allclose(np.linalg.norm(G[cruise], axis=1), 9.81, atol=0.05)


def test_gravity_direction_during_launch():
    st_ = small_trip(synth.WorldSpec((synth.SegmentSpec("a", 400.0),), elevation_noise_sigma=0.0))
    trip, R, truth = st_.trip, st_.R, st_.sim.truth
    a = longitudinal_accel(trip.v, trip.dt, R[:, 1], SPEC)
    G = estimate_gravity(trip, R, a, lateral_accel(trip.v, trip.gyro @ R[:, 2], R[:, 0]))
    idx = np.searchsorted(truth.t, trip.t)
    launch = truth.a[idx] > 0.5
    assert launch.sum() > 200
    th = np.radians(truth.pitch[idx][launch])
    expected = np.column_stack([np.zeros_like(th), np.sin(th), np.cos(th)])
    cos = np.sum(G[launch] * expected, axis=1) / np.linalg.norm(G[launch], axis=1)
    assert np.degrees(np.arccos(np.clip(cos, -1, 1))).max() < 1.5


def test_orthogonal_gravity_is_level():
    p = pitch_accel(np.array([[0.0, 0.0, 9.81]]), [0, 1, 0])
    assert p.theta[0] == 0.0
    assert p.source is PitchSource.ACCEL


def test_weak_gravity_marked_invalid():
    p = pitch_accel(np.array([[0.0, 0.0, 9.81], [0.0, 0.0, 4.0]]))
    assert p.valid.tolist() == [True, False]


def _cruise_accel_grade(st_):
    sl = segment_slice(st_.trip, st_.world.route)[0]
    p, _ = accel_pitch_series(sl, st_.R, SPEC)
    idx = _ticks(st_, sl)
    cruise = (np.abs(st_.sim.truth.a[idx]) < CRUISE_A) & (st_.sim.truth.v[idx] > 1.0)
    return sl, p, idx, cruise


def test_uphill_constant_speed_reads_three_degrees():
    st_ = small_trip(ramp_world(800.0, 3.0, 120.0))
    sl, p, idx, cruise = _cruise_accel_grade(st_)
    on_ramp = cruise & (sl.s > 300)
    assert on_ramp.sum() > 1000
    np.testing.assert_allclose(p.theta[on_ramp], 3.0, atol=0.2)


def test_calibration_offset_biases_flat_road_by_two_degrees():
    noise = synth.NoiseSpec(calib_offset=2.0)
    st_ = small_trip(synth.WorldSpec((synth.SegmentSpec("a", 600.0),), elevation_noise_sigma=0.0), noise)
    _, p, _, cruise = _cruise_accel_grade(st_)
    assert np.median(p.theta[cruise]) == pytest.approx(2.0, abs=0.1)


def test_noiseless_estimators_match_truth_where_dynamics_vanish():
    st_ = small_trip(ramp_world(800.0, 3.0, 120.0))
    sl, p_acc, idx, cruise = _cruise_accel_grade(st_)
    truth = st_.sim.truth
    p_gyro = pitch_gyro(sl, st_.R, float(truth.pitch[idx[0]]))
    still = cruise & (np.abs(st_.world.curvature_at(truth.s[idx])) == 0)
    assert still.sum() > 1000
    assert np.max(np.abs(p_acc.theta[still] - truth.grade[idx][still])) < 0.1
    assert np.max(np.abs(p_gyro.theta[still] - truth.grade[idx][still])) < 0.1
