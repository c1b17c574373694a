"""Phone-to-vehicle coordinate alignment.

The rotation matrix ``R`` has the vehicle axes expressed in the phone
frame as its columns: ``x_u`` (lateral, right), ``y_u`` (forward) and
``z_u`` (up), with ``x_u = y_u x z_u``. A phone-frame row vector ``p``
maps to vehicle coordinates as ``p @ R``.
"""

from __future__ import annotations

import numpy as np

from .preprocess import AlignedTrip, FilterSpec, butterworth_lowpass, speed_derivative
from .trace_model import SensorTrace

G_MIN, G_MAX = 9.3, 10.3


class AlignmentError(ValueError):
    pass


def estimate_z_u(trace: SensorTrace, accel=None) -> np.ndarray:
    """Unit "up" vector from the mean accelerometer reading while stationary."""
    t0, t1 = trace.stationary_window
    if accel is None:
        accel = butterworth_lowpass(trace.accel, FilterSpec(sample_rate_hz=1.0 / trace.dt))
    sel = (trace.t >= t0) & (trace.t <= t1)
    if not np.any(sel):
        raise AlignmentError("stationary window contains no samples")
    g = np.asarray(accel)[sel].mean(axis=0)
    mag = float(np.linalg.norm(g))
    if not G_MIN <= mag <= G_MAX:
        raise AlignmentError(f"not stationary or accel miscalibrated: |g| = {mag:.3f} m/s^2")
    return g / mag


def stationary_gravity(trace: SensorTrace, accel) -> np.ndarray:
    t0, t1 = trace.stationary_window
    sel = (trace.t >= t0) & (trace.t <= t1)
    return np.asarray(accel)[sel].mean(axis=0)


def _runs(mask: np.ndarray) -> list[tuple[int, int]]:
    """Half-open index ranges of consecutive True values."""
    m = np.concatenate(([False], mask, [False])).astype(np.int8)
    d = np.diff(m)
    return list(zip(np.flatnonzero(d == 1), np.flatnonzero(d == -1)))


def detect_acceleration_event(
    trip: AlignedTrip,
    z_u,
    *,
    min_duration: float = 2.0,
    min_accel: float = 1.0,
    max_yaw_rate: float = 0.02,
    spec: FilterSpec | None = None,
) -> tuple[float, float]:
    """Earliest window of sustained forward acceleration on a straight road.

    Returns ``(t_start, t_end)`` of the first maximal run lasting at least
    ``min_duration`` in which the speed-derived acceleration exceeds
    ``min_accel`` and the yaw rate about ``z_u`` stays under ``max_yaw_rate``.
    """
    dt = trip.dt
    spec = spec or FilterSpec(sample_rate_hz=1.0 / dt)
    a = speed_derivative(trip.v, dt, spec)
    yaw = trip.gyro @ np.asarray(z_u, dtype=float)
    ok = (a > min_accel) & (np.abs(yaw) < max_yaw_rate)
    for i, j in _runs(ok):
        if trip.t[j - 1] - trip.t[i] >= min_duration - 1e-9:
            return float(trip.t[i]), float(trip.t[j - 1])
    raise AlignmentError("no calibration opportunity: no straight-road acceleration event")


def estimate_R_PC(trip: AlignedTrip | SensorTrace, z_u, window, gravity=None) -> np.ndarray:
    """Rotation matrix with columns ``x_u, y_u, z_u`` (phone frame).

    ``y_u`` is the mean accelerometer reading over ``window`` minus the
    gravity vector, projected orthogonal to ``z_u``. ``gravity`` defaults to
    ``g * z_u`` with standard g.
    """
    z = np.asarray(z_u, dtype=float)
    z = z / np.linalg.norm(z)
    t0, t1 = window
    sel = (trip.t >= t0) & (trip.t <= t1)
    if not np.any(sel):
        raise AlignmentError("acceleration window contains no samples")
    g = 9.80665 * z if gravity is None else np.asarray(gravity, dtype=float)
    d = np.asarray(trip.accel)[sel].mean(axis=0) - g
    nd = np.linalg.norm(d)
    if nd == 0:
        raise AlignmentError("no horizontal acceleration in event window")
    ang = np.degrees(np.arccos(min(1.0, abs(d @ z) / nd)))
    if ang < 5.0:
        raise AlignmentError(f"forward direction nearly parallel to z_u ({ang:.2f} deg)")
    y = d - (d @ z) * z
    y /= np.linalg.norm(y)
    x = np.cross(y, z)
    x /= np.linalg.norm(x)
    # re-orthogonalize y against rounding
    y = np.cross(z, x)
    return np.column_stack([x, y, z])


def is_rotation(R, tol: float = 1e-9) -> bool:
    R = np.asarray(R, dtype=float)
    return bool(np.allclose(R.T @ R, np.eye(3), atol=tol) and abs(np.linalg.det(R) - 1.0) < tol)


def rotation_angle_deg(R_a, R_b) -> float:
    """Angle of the relative rotation ``R_a^T R_b``."""
    c = (np.trace(np.asarray(R_a).T @ np.asarray(R_b)) - 1.0) / 2.0
    return float(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))


def align_trip(trace: SensorTrace, trip: AlignedTrip) -> np.ndarray:
    """Full alignment of one trip: z_u from rest, y_u from the first launch."""
    z_u = estimate_z_u(trace, accel=trip.accel)
    window = detect_acceleration_event(trip, z_u)
    return estimate_R_PC(trip, z_u, window, gravity=stationary_gravity(trace, trip.accel))
