"""Filtering, speed resampling, stream synchronization and segment slicing."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy import signal
from scipy.ndimage import uniform_filter1d

from .trace_model import RoadSegment, SensorTrace, SpeedSeries, SpeedSource

log = logging.getLogger(__name__)

DEFAULT_CUTOFF_HZ = 2.0


@dataclass(frozen=True)
class FilterSpec:
    cutoff_hz: float = DEFAULT_CUTOFF_HZ
    sample_rate_hz: float = 200.0
    order: int = 2

    def __post_init__(self) -> None:
        if self.cutoff_hz <= 0 or self.sample_rate_hz <= 0:
            raise ValueError("cutoff and sample rate must be positive")
        if self.cutoff_hz >= self.sample_rate_hz / 2:
            raise ValueError(f"cutoff {self.cutoff_hz} Hz must be below Nyquist ({self.sample_rate_hz / 2} Hz)")


@dataclass(frozen=True)
class AlignedTrip:
    """Filtered IMU data with speed and arc length on the IMU time grid.

    ``accel`` and ``gyro`` remain in the phone frame; ``s`` is meters from
    the start of the trip, or from the segment start for a segment slice.
    """

    trip_id: str
    t: np.ndarray
    accel: np.ndarray
    gyro: np.ndarray
    v: np.ndarray
    s: np.ndarray
    lag: float = 0.0
    segment_id: str | None = None
    partial: bool = False

    def __post_init__(self) -> None:
        n = self.t.shape[0]
        if not (self.accel.shape == (n, 3) and self.gyro.shape == (n, 3) and self.v.shape == (n,) and self.s.shape == (n,)):
            raise ValueError("AlignedTrip arrays must have equal length")
        if n > 1 and np.any(np.diff(self.s) < 0):
            raise ValueError("arc length must be non-decreasing")

    def __len__(self) -> int:
        return int(self.t.shape[0])

    @property
    def dt(self) -> float:
        return float(np.median(np.diff(self.t))) if len(self) > 1 else 0.0

    def take(self, idx) -> "AlignedTrip":
        return replace(self, t=self.t[idx], accel=self.accel[idx], gyro=self.gyro[idx], v=self.v[idx], s=self.s[idx])


def butterworth_lowpass(x, spec: FilterSpec) -> np.ndarray:
    """Zero-phase (forward-backward) Butterworth low-pass along axis 0.

    The two passes square the magnitude response, so the cutoff frequency
    is attenuated by -6 dB rather than -3 dB.
    """
    x = np.asarray(x, dtype=float)
    if x.shape[0] < 4 * spec.order:
        raise ValueError(f"series too short for order-{spec.order} filter: {x.shape[0]} samples")
    sos = signal.butter(spec.order, spec.cutoff_hz, btype="low", fs=spec.sample_rate_hz, output="sos")
    padlen = min(3 * (2 * len(sos) + 1), x.shape[0] - 1)
    return signal.sosfiltfilt(sos, x, axis=0, padlen=padlen)


def resample_speed(speeds: SpeedSeries, grid) -> np.ndarray:
    """Linear interpolation of speed onto ``grid``; values clamp at the ends."""
    if speeds.t.size < 2:
        raise ValueError("need at least 2 speed samples to interpolate")
    return np.maximum(np.interp(grid, speeds.t, speeds.v), 0.0)


def arc_length(v, dt) -> np.ndarray:
    """Cumulative distance with ``s[0] = 0`` and ``s[i] = s[i-1] + v[i] * dt[i]``.

    ``dt`` may be a scalar or the per-tick interval array (``dt[0]`` unused).
    """
    v = np.asarray(v, dtype=float)
    if v.size == 0:
        return v.copy()
    step = v[1:] * (np.asarray(dt, dtype=float)[1:] if np.ndim(dt) else float(dt))
    return np.concatenate(([0.0], np.cumsum(step)))


def speed_derivative(v, dt: float, spec: FilterSpec | None = None) -> np.ndarray:
    """dv/dt by central differences, then low-passed with ``spec``."""
    a = np.gradient(np.asarray(v, dtype=float), dt)
    if spec is None:
        return a
    return butterworth_lowpass(a, spec)


def _highpass(x: np.ndarray, n: int) -> np.ndarray:
    return x - uniform_filter1d(x, size=max(n, 1), mode="nearest")


def synchronize(
    trace: SensorTrace,
    source: str | SpeedSource = SpeedSource.OBD,
    *,
    forward=None,
    max_lag: float = 2.0,
    min_correlation: float = 0.3,
    spec: FilterSpec | None = None,
    accel=None,
) -> float:
    """Lag (s) of the speed stream behind the IMU stream.

    Cross-correlates the speed-derived acceleration with the phone's
    acceleration along ``forward`` (phone-frame unit vector; estimated from
    the trace when omitted). A positive lag means speed samples carry
    timestamps that are late by ``lag``; shift them by ``-lag`` to correct.
    ``accel`` may carry the already low-passed accelerometer samples.
    """
    from . import align

    source = SpeedSource(source)
    dt = trace.dt
    spec = spec or FilterSpec(sample_rate_hz=1.0 / dt)
    speeds = trace.speed(source)
    v = resample_speed(speeds, trace.t)
    a_speed = speed_derivative(v, dt, _speed_filter(spec, source))
    if np.max(np.abs(a_speed)) <= 1.0:
        log.warning("trip %s: no acceleration event above 1 m/s^2, assuming zero lag", trace.trip_id)
        return 0.0

    accel = butterworth_lowpass(trace.accel, spec) if accel is None else accel
    if forward is None:
        z_u = align.estimate_z_u(trace, accel=accel)
        provisional = build_aligned(trace, source, spec=spec, lag=0.0, accel=accel)
        try:
            window = align.detect_acceleration_event(provisional, z_u)
            forward = align.estimate_R_PC(provisional, z_u, window)[:, 1]
        except align.AlignmentError:
            log.warning("trip %s: no calibration event for synchronization, assuming zero lag", trace.trip_id)
            return 0.0
    a_phone = accel @ np.asarray(forward, dtype=float)

    n_hp = int(round(10.0 / dt))
    x = _highpass(a_phone, n_hp)
    y = _highpass(a_speed, n_hp)
    x = (x - x.mean()) / (x.std() or 1.0)
    y = (y - y.mean()) / (y.std() or 1.0)
    corr = signal.correlate(y, x, mode="full", method="fft") / x.size
    lags = signal.correlation_lags(y.size, x.size, mode="full")
    k_max = int(round(max_lag / dt))
    sel = np.abs(lags) <= k_max
    corr, lags = corr[sel], lags[sel]
    i = int(np.argmax(corr))
    if corr[i] < min_correlation:
        log.warning("trip %s: speed/IMU correlation peak %.2f below %.2f, assuming zero lag", trace.trip_id, corr[i], min_correlation)
        return 0.0
    frac = 0.0
    if 0 < i < corr.size - 1:
        c0, c1, c2 = corr[i - 1], corr[i], corr[i + 1]
        denom = c0 - 2 * c1 + c2
        if denom < 0:
            frac = 0.5 * (c0 - c2) / denom
    return float((lags[i] + frac) * dt)


def _speed_filter(spec: FilterSpec, source: SpeedSource, cutoff_hz: float | None = None) -> FilterSpec:
    from .trace_model import NOMINAL_SPEED_RATE_HZ

    if cutoff_hz is None:
        cutoff_hz = min(spec.cutoff_hz, 0.45 * NOMINAL_SPEED_RATE_HZ[source.value])
    return FilterSpec(cutoff_hz=cutoff_hz, sample_rate_hz=spec.sample_rate_hz)


def build_aligned(
    trace: SensorTrace,
    source: str | SpeedSource = SpeedSource.OBD,
    *,
    spec: FilterSpec | None = None,
    lag: float = 0.0,
    accel=None,
    gyro=None,
) -> AlignedTrip:
    source = SpeedSource(source)
    spec = spec or FilterSpec(sample_rate_hz=1.0 / trace.dt)
    accel = butterworth_lowpass(trace.accel, spec) if accel is None else accel
    gyro = butterworth_lowpass(trace.gyro, spec) if gyro is None else gyro
    v = resample_speed(trace.speed(source).shifted(-lag), trace.t)
    dts = np.diff(trace.t, prepend=trace.t[0])
    return AlignedTrip(trace.trip_id, trace.t, accel, gyro, v, arc_length(v, dts), lag=lag)


def preprocess(
    trace: SensorTrace,
    source: str | SpeedSource = SpeedSource.OBD,
    spec: FilterSpec | None = None,
    sync: bool = True,
) -> AlignedTrip:
    """Filter, synchronize and resample one trace onto its IMU grid."""
    source = SpeedSource(source)
    spec = spec or FilterSpec(sample_rate_hz=1.0 / trace.dt)
    accel = butterworth_lowpass(trace.accel, spec)
    gyro = butterworth_lowpass(trace.gyro, spec)
    lag = synchronize(trace, source, spec=spec, accel=accel) if sync else 0.0
    return build_aligned(trace, source, spec=spec, lag=lag, accel=accel, gyro=gyro)


def segment_indices(trip: AlignedTrip, route: Sequence[RoadSegment], route_start: float | None = None) -> list[np.ndarray]:
    """Tick indices of ``trip`` falling on each segment of ``route``.

    Ticks are assigned by route distance ``route_start + s`` to the segment
    whose half-open extent contains them (the last segment is closed).
    """
    start = route[0].route_offset if route_start is None else route_start
    pos = start + trip.s
    out = []
    for k, seg in enumerate(route):
        last = k == len(route) - 1
        inside = (pos >= seg.route_offset) & ((pos <= seg.end) if last else (pos < seg.end))
        out.append(np.flatnonzero(inside))
    return out


def segment_slice(trip: AlignedTrip, route: Sequence[RoadSegment], route_start: float | None = None) -> list[AlignedTrip]:
    """Split a trip into per-segment slices with ``s`` re-origined at each segment start.

    A slice is flagged partial when the trip does not reach both ends of the
    segment within one tick's travel.
    """
    start = route[0].route_offset if route_start is None else route_start
    step = float(np.max(trip.v) * trip.dt) if len(trip) else 0.0
    tol = max(step, 1e-6)
    slices = []
    for seg, idx in zip(route, segment_indices(trip, route, route_start)):
        part = trip.take(idx)
        part = replace(part, s=part.s + start - seg.route_offset, segment_id=seg.segment_id)
        if idx.size == 0:
            partial = True
        else:
            partial = bool(part.s[0] > tol or part.s[-1] < seg.length - tol)
        slices.append(replace(part, partial=partial))
    return slices
