"""Synthetic worlds and sensor traces with known ground truth.

A world is a route of segments with a smooth true grade, a horizontal
curvature profile and an elevation file derived from the grade. A trip
drives a kinematic vehicle over the route and emits phone-frame IMU data
and speed streams carrying configurable sensor errors:

* gyroscope bias re-drawn per segment, a slow random-walk wander and
  white noise;
* accelerometer white noise and an error along the forward axis that grows
  with acceleration and jerk;
* body pitch proportional to forward acceleration;
* a calibration offset from parking on an inclined apron at the start;
* an arbitrary phone mounting rotation;
* noisy, delayed speed streams at 10 Hz (OBD) and 1 Hz (GPS).
"""

from __future__ import annotations

import bisect
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.spatial.transform import Rotation

from .elevation import ElevationProfile
from .trace_model import GradeProfile, RoadSegment, SensorTrace, SpeedSeries, SpeedSource, validate_route

GRAVITY = 9.80665
IMU_RATE_HZ = 200.0
TRUTH_RESOLUTION = 0.1
ELEVATION_SPACING = 30.0
DRIVE_RATE_HZ = 20.0
APRON_M = (20.0, 30.0)  # inclined apron: full tilt until the first value, level from the second


@dataclass(frozen=True)
class Curve:
    start: float
    end: float
    curvature: float  # 1/m, positive turns left


@dataclass(frozen=True)
class SegmentSpec:
    segment_id: str
    length: float
    knots: tuple = ()  # (distance, grade_deg) pairs, segment-relative
    shape: str = "pchip"  # or "linear"


@dataclass(frozen=True)
class WorldSpec:
    segments: tuple
    elevation_corruption: tuple = ()  # (start, end, depth_m) in route meters
    elevation_clean: tuple = ()  # (start, end) where elevation data is accurate
    curves: tuple = ()
    elevation_noise_sigma: float = 3.0
    clean_noise_sigma: float = 0.05
    elevation_spacing: float = ELEVATION_SPACING
    seed: int = 0

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "WorldSpec":
        d = dict(d)
        d["segments"] = tuple(
            SegmentSpec(s["segment_id"], float(s["length"]), tuple(tuple(k) for k in s.get("knots", ())), s.get("shape", "pchip"))
            for s in d["segments"]
        )
        d["curves"] = tuple(Curve(**c) if isinstance(c, dict) else Curve(*c) for c in d.get("curves", ()))
        d["elevation_corruption"] = tuple(tuple(r) for r in d.get("elevation_corruption", ()))
        d["elevation_clean"] = tuple(tuple(r) for r in d.get("elevation_clean", ()))
        return cls(**d)


def save_world_spec(spec: WorldSpec, path: str | Path) -> None:
    Path(path).write_text(spec.to_json() + "\n")


def load_world_spec(path: str | Path) -> WorldSpec:
    return WorldSpec.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class World:
    spec: WorldSpec
    route: list
    truth: dict  # segment_id -> GradeProfile at 0.1 m
    route_truth: GradeProfile
    elevation: ElevationProfile
    true_elevation: np.ndarray
    curvature: np.ndarray  # on the route_truth grid

    @property
    def length(self) -> float:
        return float(self.route[-1].end)

    def grade_at(self, x) -> np.ndarray:
        return np.interp(x, self.route_truth.distances, self.route_truth.grades)

    def curvature_at(self, x) -> np.ndarray:
        return np.interp(x, self.route_truth.distances, self.curvature)

    def segment_index(self, x) -> np.ndarray:
        ends = np.array([s.end for s in self.route[:-1]])
        return np.searchsorted(ends, np.asarray(x), side="right")


@dataclass(frozen=True)
class NoiseSpec:
    gyro_bias: tuple | float = 0.0  # deg/s, scalar or one value per segment
    gyro_noise_sigma: float = 0.0  # deg/s
    gyro_bias_walk: float = 0.0  # deg/s per sqrt(s), bias instability
    accel_noise_sigma: float = 0.0  # m/s^2
    accel_dynamics_gain: float = 0.0  # forward error = gain * (a + 0.5 s * jerk)
    calib_offset: float = 0.0  # deg; accelerometer grade reads this much high
    mount_rotation: tuple | None = None  # 3x3 rows, columns are vehicle axes in phone frame
    speed_noise_sigma: float = 0.0  # OBD, m/s
    gps_speed_noise_sigma: float | None = None  # defaults to 2x OBD
    sync_lag: float = 0.0  # s; both speed streams report v(t - lag)
    obd_quantum: float = 0.0  # m/s resolution of reported OBD speed (1 km/h on real ports)
    body_pitch_gain: float = 0.3  # deg per m/s^2

    def __post_init__(self) -> None:
        for name in ("gyro_noise_sigma", "gyro_bias_walk", "accel_noise_sigma", "speed_noise_sigma", "accel_dynamics_gain"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.gps_speed_noise_sigma is not None and self.gps_speed_noise_sigma < 0:
            raise ValueError("gps_speed_noise_sigma must be >= 0")

    def bias_per_segment(self, n: int) -> np.ndarray:
        b = np.atleast_1d(np.asarray(self.gyro_bias, dtype=float))
        return np.full(n, b[0]) if b.size == 1 else b[:n]

    @property
    def R(self) -> np.ndarray:
        return np.eye(3) if self.mount_rotation is None else np.asarray(self.mount_rotation, dtype=float)


@dataclass(frozen=True)
class DriverProfile:
    cruise: tuple | float = 15.0  # m/s, scalar or per segment
    fluctuation: float = 0.3  # m/s amplitude of slow sinusoidal speed wander
    traffic_sigma: float = 0.0  # m/s stationary std of the random target-speed wander
    traffic_tau: float = 8.0  # s correlation time of that wander
    stops_at: tuple = ()  # indices of segment boundaries (1..n-1) with a stop
    stop_duration: float = 8.0
    stationary_s: float = 16.0
    launch_accel: float = 1.8
    brake_decel: float = 1.5
    max_jerk: float = 1.5
    gain: float = 0.6
    end_wait: float = 3.0
    seed: int = 0


@dataclass(frozen=True)
class TripTruth:
    R_PC: np.ndarray
    t: np.ndarray
    s: np.ndarray
    v: np.ndarray
    a: np.ndarray
    pitch: np.ndarray  # vehicle pitch, deg
    grade: np.ndarray  # road grade under the vehicle, deg
    body_pitch: np.ndarray
    apron_pitch: np.ndarray
    pitch_rate: np.ndarray  # emitted true rad/s about x_u
    bias: np.ndarray  # deg/s per tick
    calib_offset: float
    sync_lag: float


@dataclass(frozen=True)
class SimulatedTrip:
    trace: SensorTrace
    truth: TripTruth


# -- worlds ---------------------------------------------------------------


def _segment_grade(seg: SegmentSpec, x: np.ndarray) -> np.ndarray:
    if not seg.knots:
        return np.zeros_like(x)
    k = np.asarray(seg.knots, dtype=float)
    if k.shape[0] == 1:
        return np.full_like(x, k[0, 1])
    if seg.shape == "linear":
        return np.interp(x, k[:, 0], k[:, 1])
    return PchipInterpolator(k[:, 0], k[:, 1], extrapolate=True)(np.clip(x, k[0, 0], k[-1, 0]))


def generate_world(spec: WorldSpec) -> World:
    """Build route, 0.1 m true grade, curvature and the noisy elevation file."""
    rng = np.random.default_rng(spec.seed)
    route, off = [], 0.0
    for s in spec.segments:
        route.append(RoadSegment(s.segment_id, float(s.length), off))
        off += float(s.length)
    validate_route(route)
    n = int(round(off / TRUTH_RESOLUTION))
    x = np.arange(n + 1) * TRUTH_RESOLUTION
    grade = np.zeros_like(x)
    truth = {}
    for seg, r in zip(spec.segments, route):
        sel = (x >= r.route_offset - 1e-9) & (x <= r.end + 1e-9)
        grade[sel] = _segment_grade(seg, x[sel] - r.route_offset)
        xs = np.arange(int(round(r.length / TRUTH_RESOLUTION)) + 1) * TRUTH_RESOLUTION
        truth[seg.segment_id] = GradeProfile(seg.segment_id, TRUTH_RESOLUTION, xs, _segment_grade(seg, xs))
    kappa = np.zeros_like(x)
    for c in spec.curves:
        kappa[(x >= c.start) & (x < c.end)] = c.curvature
    dz = np.sin(np.radians(grade))
    elev = np.concatenate(([0.0], np.cumsum(0.5 * (dz[1:] + dz[:-1]) * TRUTH_RESOLUTION)))

    xe = np.arange(0.0, off + 1e-9, spec.elevation_spacing)
    if xe[-1] < off - 1e-9:
        xe = np.append(xe, off)
    ze = np.interp(xe, x, elev)
    sigma = np.full(xe.shape, spec.elevation_noise_sigma)
    for a, b in spec.elevation_clean:
        sigma[(xe >= a) & (xe <= b)] = spec.clean_noise_sigma
    for a, b, depth in spec.elevation_corruption:
        sel = (xe >= a) & (xe <= b)
        # the terrain under a bridge dips away from the deck
        ze[sel] -= depth * np.sin(np.pi * (xe[sel] - a) / (b - a)) ** 2
    ze = ze + sigma * rng.standard_normal(xe.shape)
    return World(
        spec, route, truth, GradeProfile("route", TRUTH_RESOLUTION, x, grade), ElevationProfile(xe, ze), elev, kappa
    )


def flat_world(length: float = 1000.0, n_segments: int = 1) -> WorldSpec:
    L = length / n_segments
    return WorldSpec(tuple(SegmentSpec(f"seg{i}", L) for i in range(n_segments)))


def corrupted_fraction(spec: WorldSpec) -> float:
    total = sum(s.length for s in spec.segments)
    return sum(b - a for a, b, _ in spec.elevation_corruption) / total


DEFAULT_SEGMENT_LENGTHS = (1000.0, 1300.0, 900.0, 1200.0, 1100.0, 1000.0, 1400.0, 1100.0)


def default_world_spec(seed: int = 0, clean_zones: int = 2, clean_length: float = 750.0) -> WorldSpec:
    """The 9 km, 8-segment evaluation world with one bridge.

    Grade knots every ~150 m follow a bounded random walk; curves avoid the
    first 200 m and segment boundaries so launches happen on straight road.
    The bridge covers 1260 m (14%) and ``clean_zones`` stretches of accurate
    elevation data are placed away from it.
    """
    rng = np.random.default_rng(seed)
    segments, curves = [], []
    off = 0.0
    g = 0.0
    for i, L in enumerate(DEFAULT_SEGMENT_LENGTHS):
        n = max(2, int(round(L / 150.0)))
        xs = np.linspace(0.0, L, n + 1)
        knots = []
        for xk in xs:
            if off + xk < 60.0:
                val = 0.0
            else:
                g = float(np.clip(0.85 * g + rng.normal(0.0, 1.5), -6.0, 6.0))
                val = round(g, 3)
            knots.append((float(xk), val))
        # continuity across segment joints
        if segments:
            knots[0] = (0.0, segments[-1].knots[-1][1])
        segments.append(SegmentSpec(f"seg{i + 1}", L, tuple(knots)))
        for _ in range(rng.integers(1, 3)):
            c0 = off + rng.uniform(200.0, L - 350.0)
            clen = rng.uniform(80.0, 150.0)
            if c0 < 250.0:
                continue
            curves.append(Curve(float(c0), float(c0 + clen), float(rng.choice([-1, 1]) / rng.uniform(150.0, 400.0))))
        off += L
    bridge_start = 4700.0
    corruption = ((bridge_start, bridge_start + 1260.0, 15.0),)
    starts = [1500.0, 7200.0, 3300.0][:clean_zones]
    clean = tuple((s, s + clean_length) for s in starts)
    return WorldSpec(tuple(segments), corruption, clean, tuple(curves), seed=seed)


# -- driving --------------------------------------------------------------


def _target_speed(world: World, driver: DriverProfile) -> tuple[np.ndarray, np.ndarray]:
    cruise = np.atleast_1d(np.asarray(driver.cruise, dtype=float))
    if cruise.size == 1:
        cruise = np.full(len(world.route), cruise[0])
    xs = [0.0]
    vs = [cruise[0]]
    for seg, v in zip(world.route, cruise):
        xs += [seg.route_offset + 50.0, seg.end - 50.0]
        vs += [v, v]
    xs.append(world.length + 100.0)
    vs.append(cruise[-1])
    return np.asarray(xs), np.asarray(vs)


def _drive(world: World, driver: DriverProfile, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Jerk-limited speed controller at 20 Hz; returns time and acceleration."""
    dt = 1.0 / DRIVE_RATE_HZ
    tx, tv = (list(map(float, x)) for x in _target_speed(world, driver))
    periods = rng.uniform(20.0, 60.0, 3)
    phases = rng.uniform(0.0, 2 * np.pi, 3)
    omegas = [2 * math.pi / float(p) for p in periods]
    phases = [float(p) for p in phases]
    amp = driver.fluctuation / math.sqrt(3.0)
    # Ornstein-Uhlenbeck wander of the target speed (traffic)
    rho = math.exp(-dt / driver.traffic_tau)
    ou_step = driver.traffic_sigma * math.sqrt(1.0 - rho * rho)
    ou = smooth = 0.0
    k_smooth = dt / 2.0  # 2 s lag smooths the wander into drivable targets
    stops = [world.route[i].route_offset for i in sorted(driver.stops_at) if 0 < i < len(world.route)]
    stops.append(world.length + 3.0)
    gain, brake, launch, jmax = driver.gain, driver.brake_decel, driver.launch_accel, driver.max_jerk
    dj = jmax * dt
    normals: list = []
    t, s, v, a = 0.0, 0.0, 0.0, 0.0
    ts, acc = [], []
    wait_until = driver.stationary_s
    k = 0
    max_steps = int(1e6)
    for _ in range(max_steps):
        ts.append(t)
        if t < wait_until:
            a_new = 0.0
            v = 0.0
        else:
            d = stops[k] - s - 0.5
            if not normals:
                normals = rng.standard_normal(4096).tolist()[::-1]
            ou = rho * ou + ou_step * normals.pop()
            smooth += k_smooth * (ou - smooth)
            fl = amp * sum(math.sin(w * t + ph) for w, ph in zip(omegas, phases)) + smooth
            j = bisect.bisect_right(tx, s)
            j = min(max(j, 1), len(tx) - 1)
            f = min(max((s - tx[j - 1]) / (tx[j] - tx[j - 1]), 0.0), 1.0)
            v_des = tv[j - 1] + f * (tv[j] - tv[j - 1]) + fl
            a_cmd = min(max(gain * (v_des - v), -brake), launch)
            # brake once the stopping distance (plus jerk lag) reaches the stop line
            lag = abs(a) / jmax + brake / jmax
            if v > 0 and v * v / (2.0 * brake) + v * lag >= d:
                a_cmd = min(a_cmd, -v * v / (2.0 * max(d, 0.05)))
            a_cmd = max(a_cmd, -3.0 * brake)
            a_new = a + min(max(a_cmd - a, -dj), dj)
            if v + a_new * dt <= 0.0:
                # come to rest at the stop line
                a_new = -v / dt if v > 0 else 0.0
                if d < 3.0:
                    k += 1
                    if k >= len(stops):
                        acc.append(a_new)
                        v, s = 0.0, s + 0.5 * v * dt
                        t += dt
                        n_end = int(round(driver.end_wait / dt))
                        ts.extend(t + dt * np.arange(n_end))
                        acc.extend([0.0] * n_end)
                        break
                    wait_until = t + dt + driver.stop_duration
        acc.append(a_new)
        s += v * dt + 0.5 * a_new * dt * dt
        v = max(v + a_new * dt, 0.0)
        a = a_new if t >= wait_until else 0.0
        t += dt
    return np.asarray(ts), np.asarray(acc)


def _kinematics(t20: np.ndarray, a20: np.ndarray):
    """Interpolate acceleration to the IMU rate and integrate speed and distance."""
    dt = 1.0 / IMU_RATE_HZ
    n = int(np.floor(t20[-1] / dt)) + 1
    t = np.arange(n) * dt
    a = np.interp(t, t20, a20)
    v = np.concatenate(([0.0], np.cumsum(0.5 * (a[1:] + a[:-1]) * dt)))
    neg = v < 1e-9  # roundoff around standstill
    v[neg] = 0.0
    a[neg] = 0.0
    s = np.concatenate(([0.0], np.cumsum(0.5 * (v[1:] + v[:-1]) * dt)))
    return t, a, v, s


def _backward_rate(x: np.ndarray, dt: float) -> np.ndarray:
    return np.concatenate(([0.0], np.diff(x) / dt))


def random_mount(rng: np.random.Generator) -> np.ndarray:
    return Rotation.random(random_state=rng).as_matrix()


def simulate_trip(
    world: World,
    driver: DriverProfile,
    noise: NoiseSpec,
    trip_id: str = "trip0",
    seed: int = 0,
    phone_id: str = "phone0",
    vehicle_id: str = "vehicle0",
) -> SimulatedTrip:
    """Drive ``world`` once and emit a sensor trace plus its ground truth.

    The emitted pitch rate is the backward difference of the true vehicle
    pitch, so rectangle-rule integration of the noiseless gyro reproduces
    the pitch to rounding error.
    """
    rng = np.random.default_rng([seed, driver.seed])
    t20, a20 = _drive(world, driver, rng)
    t, a, v, s = _kinematics(t20, a20)
    dt = 1.0 / IMU_RATE_HZ

    grade = world.grade_at(s)
    body = noise.body_pitch_gain * a
    r0, r1 = APRON_M
    apron = -noise.calib_offset * np.clip((r1 - s) / (r1 - r0), 0.0, 1.0)
    pitch = grade + body + apron
    th = np.radians(pitch)
    th_rate = _backward_rate(th, dt)
    road_rate = _backward_rate(np.radians(grade), dt)
    yaw_rate = v * world.curvature_at(s)
    jerk = _backward_rate(a, dt)

    f = np.column_stack([-v * yaw_rate, a + GRAVITY * np.sin(th), v * road_rate + GRAVITY * np.cos(th)])
    f[:, 1] += noise.accel_dynamics_gain * (a + 0.5 * jerk)
    omega = np.column_stack([th_rate, yaw_rate * np.sin(th), yaw_rate * np.cos(th)])
    bias = noise.bias_per_segment(len(world.route))[np.clip(world.segment_index(s), 0, len(world.route) - 1)]
    omega[:, 0] += np.radians(bias)

    R = noise.R
    accel = f @ R.T + noise.accel_noise_sigma * rng.standard_normal(f.shape)
    gyro = omega @ R.T + np.radians(noise.gyro_noise_sigma) * rng.standard_normal(omega.shape)
    if noise.gyro_bias_walk > 0:
        walk = noise.gyro_bias_walk * np.sqrt(dt) * np.cumsum(rng.standard_normal(t.size))
        bias = bias + walk
        gyro += np.radians(walk)[:, None] * R[:, 0][None, :]

    def speed_stream(rate, sigma, quantum=0.0):
        ts = np.arange(0.0, t[-1] + 1e-9, 1.0 / rate)
        vs = np.interp(ts - noise.sync_lag, t, v, left=0.0)
        moving = vs > 0.0
        vs = np.where(moving, np.maximum(vs + sigma * rng.standard_normal(ts.shape), 0.0), 0.0)
        if quantum > 0:
            vs = np.round(vs / quantum) * quantum
        return ts, vs

    gps_sigma = 2.0 * noise.speed_noise_sigma if noise.gps_speed_noise_sigma is None else noise.gps_speed_noise_sigma
    to, vo = speed_stream(10.0, noise.speed_noise_sigma, noise.obd_quantum)
    tg, vg = speed_stream(1.0, gps_sigma)
    stat_end = float(t[np.flatnonzero(v > 0)[0] - 1]) if np.any(v > 0) else float(t[-1])
    lagpad = abs(noise.sync_lag) + 1.0
    window = (0.5, max(stat_end - lagpad, 0.5 + 10.0))
    trace = SensorTrace(
        trip_id,
        phone_id,
        vehicle_id,
        t,
        accel,
        gyro,
        {SpeedSource.OBD: SpeedSeries(to, vo, "obd"), SpeedSource.GPS: SpeedSeries(tg, vg, "gps")},
        window,
    )
    truth = TripTruth(R, t, s, v, a, pitch, grade, body, apron, th_rate, bias, noise.calib_offset, noise.sync_lag)
    return SimulatedTrip(trace, truth)


# -- trip populations -----------------------------------------------------


STOP_PROBABILITY = 0.5


def heterogeneous_noise(rng: np.random.Generator, n_segments: int, calib_offset: float | None = None) -> NoiseSpec:
    """One trip's sensor errors drawn from the evaluation ranges."""
    return NoiseSpec(
        gyro_bias=tuple(float(b) for b in rng.uniform(-0.2, 0.2, n_segments)),
        gyro_noise_sigma=float(rng.uniform(0.02, 0.08)),
        accel_noise_sigma=float(rng.uniform(0.1, 0.5)),
        accel_dynamics_gain=float(rng.uniform(0.05, 0.15)),
        calib_offset=float(rng.uniform(-2.0, 2.0)) if calib_offset is None else float(calib_offset),
        mount_rotation=tuple(map(tuple, random_mount(rng))),
        speed_noise_sigma=float(rng.uniform(0.015, 0.03)),
        gps_speed_noise_sigma=float(rng.uniform(0.02, 0.05)),
        sync_lag=float(rng.uniform(-0.5, 0.5)),
    )


def random_driver(rng: np.random.Generator, n_segments: int, stop_probability: float = STOP_PROBABILITY) -> DriverProfile:
    """Random driver; every segment boundary is a signal that is red with ``stop_probability``."""
    red = rng.random(max(n_segments - 1, 0)) < stop_probability
    stops = tuple(int(i) + 1 for i in np.flatnonzero(red))
    return DriverProfile(
        cruise=tuple(float(c) for c in rng.uniform(12.0, 18.0, n_segments)),
        fluctuation=float(rng.uniform(0.2, 0.5)),
        traffic_sigma=float(rng.uniform(2.0, 3.0)),
        traffic_tau=float(rng.uniform(3.0, 5.0)),
        gain=float(rng.uniform(1.0, 1.4)),
        stops_at=stops,
        stop_duration=float(rng.uniform(5.0, 12.0)),
        stationary_s=float(rng.uniform(15.0, 20.0)),
        launch_accel=float(rng.uniform(1.6, 2.2)),
        seed=int(rng.integers(0, 2**31)),
    )


@dataclass(frozen=True)
class TripPlan:
    trip_id: str
    driver: DriverProfile
    noise: NoiseSpec
    seed: int


def plan_trips(world: World, n_trips: int, seed: int, calib_offset: float | None = None) -> list[TripPlan]:
    rng = np.random.default_rng([seed, 7])
    n = len(world.route)
    plans = []
    for i in range(n_trips):
        noise = heterogeneous_noise(rng, n, calib_offset)
        driver = random_driver(rng, n)
        plans.append(TripPlan(f"trip{i:02d}", driver, noise, int(rng.integers(0, 2**31))))
    return plans


def simulate_plans(world: World, plans: Sequence[TripPlan]) -> list[SimulatedTrip]:
    return [
        simulate_trip(world, p.driver, p.noise, p.trip_id, p.seed, phone_id=f"phone{i % 4}", vehicle_id=f"vehicle{i % 3}")
        for i, p in enumerate(plans)
    ]
