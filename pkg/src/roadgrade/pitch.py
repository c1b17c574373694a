"""Per-tick grade estimates from the gyroscope and from the accelerometer."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from functools import cached_property

import numpy as np

from .preprocess import AlignedTrip, FilterSpec, speed_derivative

MIN_GRAVITY = 5.0


class PitchSource(str, Enum):
    GYRO = "gyro"
    ACCEL = "accel"


@dataclass(frozen=True)
class PitchSeries:
    """Grade (degrees) per tick against arc length ``s`` (meters)."""

    s: np.ndarray
    theta: np.ndarray
    source: PitchSource
    trip_id: str
    valid: np.ndarray | None = None
    segment_id: str | None = None

    def __post_init__(self) -> None:
        if self.s.shape != self.theta.shape:
            raise ValueError("s and theta must have equal length")
        if not np.all(np.isfinite(self.theta[self.mask])):
            raise ValueError("non-finite pitch values")

    @property
    def mask(self) -> np.ndarray:
        return np.ones(self.theta.shape, bool) if self.valid is None else self.valid

    def __len__(self) -> int:
        return int(self.s.size)

    @cached_property
    def _distinct(self) -> tuple[np.ndarray, np.ndarray]:
        """Valid samples with ticks sharing one distance (vehicle at rest) averaged."""
        m = self.mask
        s, th = self.s[m], self.theta[m]
        if s.size > 1 and np.all(np.diff(s) >= 0):
            first = np.concatenate(([True], np.diff(s) > 0))
            if first.all():
                return s, th
            inv = np.cumsum(first) - 1
            return s[first], np.bincount(inv, weights=th) / np.bincount(inv)
        u, inv = np.unique(s, return_inverse=True)
        if u.size != s.size:
            th = np.bincount(inv, weights=th) / np.bincount(inv)
        return u, th

    def on_grid(self, x) -> np.ndarray:
        """Grade interpolated at distances ``x``."""
        u, th = self._distinct
        if u.size == 0:
            return np.full(np.shape(x), np.nan)
        return np.interp(x, u, th)


def pitch_gyro(
    slice_: AlignedTrip,
    R,
    theta0: float = 0.0,
    *,
    hold_below_speed: float | None = None,
) -> PitchSeries:
    """Integrate the pitch rate about ``x_u`` starting from ``theta0`` degrees.

    ``theta[0] = theta0`` and ``theta[k] = theta[k-1] + w[k] * (t[k] - t[k-1])``.
    When ``hold_below_speed`` is given, increments are dropped while the
    vehicle is slower than that (grade cannot change at a fixed position).
    """
    R = np.asarray(R, dtype=float)
    omega = slice_.gyro @ R[:, 0]
    inc = np.degrees(omega[1:] * np.diff(slice_.t))
    if hold_below_speed is not None:
        inc = np.where(slice_.v[1:] < hold_below_speed, 0.0, inc)
    theta = theta0 + np.concatenate(([0.0], np.cumsum(inc)))
    return PitchSeries(slice_.s, theta, PitchSource.GYRO, slice_.trip_id, segment_id=slice_.segment_id)


def longitudinal_accel(v, dt: float, y_u, spec: FilterSpec | None = None) -> np.ndarray:
    """Forward acceleration from speed, as vectors along ``y_u``."""
    a = speed_derivative(v, dt, spec)
    return np.outer(a, np.asarray(y_u, dtype=float))


def lateral_accel(v, omega_z, x_u) -> np.ndarray:
    """Centripetal acceleration ``omega x v`` for forward speed ``v`` and yaw rate ``omega_z``.

    With ``x_u`` pointing right, a left turn (positive yaw about up) pulls
    toward ``-x_u``.
    """
    return np.outer(-np.asarray(omega_z, float) * np.asarray(v, float), np.asarray(x_u, dtype=float))


def estimate_gravity(slice_: AlignedTrip, R, a_lon, a_lat) -> np.ndarray:
    """Gravity reaction per tick in vehicle coordinates: measured minus vehicle dynamics."""
    return (slice_.accel - a_lon - a_lat) @ np.asarray(R, dtype=float)


def pitch_accel(G, y_u=(0.0, 1.0, 0.0), trip_id: str = "", s=None, segment_id: str | None = None) -> PitchSeries:
    """Grade from the angle between gravity reaction ``G`` and the forward axis.

    Returned as ``90 - angle(G, y_u)`` so a nose-up (uphill) vehicle reads
    positive. Ticks with ``|G|`` under 5 m/s^2 are marked invalid.
    """
    G = np.asarray(G, dtype=float)
    y = np.asarray(y_u, dtype=float)
    y = y / np.linalg.norm(y)
    mag = np.linalg.norm(G, axis=1)
    valid = mag >= MIN_GRAVITY
    cosang = np.divide(G @ y, mag, out=np.zeros_like(mag), where=mag > 0)
    theta = 90.0 - np.degrees(np.arccos(np.clip(cosang, -1.0, 1.0)))
    s = np.arange(G.shape[0], dtype=float) if s is None else s
    return PitchSeries(s, theta, PitchSource.ACCEL, trip_id, valid=valid, segment_id=segment_id)


def accel_pitch_series(slice_: AlignedTrip, R, spec: FilterSpec | None = None) -> tuple[PitchSeries, np.ndarray]:
    """Accelerometer grade for a slice plus the forward acceleration used to clean it."""
    R = np.asarray(R, dtype=float)
    dt = slice_.dt
    a = speed_derivative(slice_.v, dt, spec)
    a_lon = np.outer(a, R[:, 1])
    a_lat = lateral_accel(slice_.v, slice_.gyro @ R[:, 2], R[:, 0])
    G = estimate_gravity(slice_, R, a_lon, a_lat)
    return pitch_accel(G, trip_id=slice_.trip_id, s=slice_.s, segment_id=slice_.segment_id), a
