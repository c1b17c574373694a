"""Shared domain types, units and file formats.

Units are SI throughout except grade, which is always degrees with uphill
(in the direction of travel) positive. Vectors are stored as ``(N, 3)``
arrays in the phone frame unless a name says otherwise.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

NOMINAL_IMU_RATE_HZ = 200.0
NOMINAL_SPEED_RATE_HZ = {"obd": 10.0, "gps": 1.0}
MIN_STATIONARY_S = 10.0
STATIONARY_SPEED_MPS = 0.1
MAX_ROAD_GRADE_DEG = 45.0

TRACE_HEADER = ("t", "ax", "ay", "az", "gx", "gy", "gz")
SPEED_HEADER = ("t", "v")
GROUND_TRUTH_HEADER = ("route_distance_m", "grade_deg")


class TraceFormatError(ValueError):
    """A file does not follow its schema."""


class TraceValidationError(ValueError):
    """Parsed data violates a domain invariant."""


class SpeedSource(str, Enum):
    OBD = "obd"
    GPS = "gps"


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class SpeedSeries:
    """Speed samples from one source (``v`` in m/s, ``t`` in seconds)."""

    t: np.ndarray
    v: np.ndarray
    source: SpeedSource

    def __post_init__(self) -> None:
        object.__setattr__(self, "t", _frozen(self.t))
        object.__setattr__(self, "v", _frozen(self.v))
        object.__setattr__(self, "source", SpeedSource(self.source))
        if self.t.ndim != 1 or self.t.shape != self.v.shape:
            raise TraceValidationError(f"{self.source.value} speed: t and v must be equal-length 1-D arrays")
        if not np.all(np.isfinite(self.v)) or not np.all(np.isfinite(self.t)):
            raise TraceValidationError(f"{self.source.value} speed: non-finite values")
        if np.any(self.v < 0):
            raise TraceValidationError(f"{self.source.value} speed: negative speed")
        if self.t.size > 1 and np.any(np.diff(self.t) <= 0):
            raise TraceValidationError(f"{self.source.value} speed: timestamps not strictly increasing")

    def shifted(self, dt: float) -> "SpeedSeries":
        """Copy with timestamps moved by ``dt`` seconds."""
        return SpeedSeries(self.t + dt, self.v, self.source)


@dataclass(frozen=True)
class SensorTrace:
    """One recorded trip: 200 Hz IMU samples plus OBD/GPS speed streams.

    ``accel`` is specific force (reads +g upward at rest) and ``gyro`` is
    angular rate in rad/s, both in the phone frame.
    """

    trip_id: str
    phone_id: str
    vehicle_id: str
    t: np.ndarray
    accel: np.ndarray
    gyro: np.ndarray
    speeds: dict
    stationary_window: tuple

    def __post_init__(self) -> None:
        object.__setattr__(self, "t", _frozen(self.t))
        object.__setattr__(self, "accel", _frozen(self.accel))
        object.__setattr__(self, "gyro", _frozen(self.gyro))
        speeds = {SpeedSource(k): v for k, v in dict(self.speeds).items()}
        object.__setattr__(self, "speeds", speeds)
        object.__setattr__(self, "stationary_window", tuple(float(x) for x in self.stationary_window))
        self.validate()

    def validate(self) -> None:
        n = self.t.shape[0]
        if self.t.ndim != 1 or n < 2:
            raise TraceValidationError("trace needs at least 2 IMU samples")
        if self.accel.shape != (n, 3) or self.gyro.shape != (n, 3):
            raise TraceValidationError("accel and gyro must be (N, 3) and match t")
        if not (np.all(np.isfinite(self.accel)) and np.all(np.isfinite(self.gyro)) and np.all(np.isfinite(self.t))):
            raise TraceValidationError("non-finite IMU values")
        if np.any(np.diff(self.t) <= 0):
            i = int(np.argmax(np.diff(self.t) <= 0))
            raise TraceValidationError(f"IMU timestamps not strictly increasing at sample {i + 1}")
        if not self.speeds:
            raise TraceValidationError("trace has no speed stream")
        for s in self.speeds.values():
            if not isinstance(s, SpeedSeries):
                raise TraceValidationError("speeds must map source -> SpeedSeries")
        if len(self.stationary_window) != 2:
            raise TraceValidationError("stationary_window must be [t0, t1]")
        t0, t1 = self.stationary_window
        if t1 - t0 < MIN_STATIONARY_S - 1e-9:
            raise TraceValidationError(f"stationary_window shorter than {MIN_STATIONARY_S:g} s")
        if t0 < self.t[0] - 1e-9 or t1 > self.t[-1] + 1e-9:
            raise TraceValidationError("stationary_window outside IMU time range")
        for s in self.speeds.values():
            inside = (s.t >= t0) & (s.t <= t1)
            if np.any(s.v[inside] >= STATIONARY_SPEED_MPS):
                raise TraceValidationError(f"vehicle moving during stationary_window ({s.source.value} speed)")

    @property
    def dt(self) -> float:
        return float(np.median(np.diff(self.t)))

    def gaps(self, nominal_rate_hz: float = NOMINAL_IMU_RATE_HZ) -> np.ndarray:
        """Indices ``i`` where ``t[i+1] - t[i]`` exceeds 3 nominal periods."""
        return np.flatnonzero(np.diff(self.t) > 3.0 / nominal_rate_hz)

    def speed(self, source: str | SpeedSource) -> SpeedSeries:
        source = SpeedSource(source)
        if source not in self.speeds:
            raise KeyError(f"trace {self.trip_id} has no {source.value} speed stream")
        return self.speeds[source]


@dataclass(frozen=True)
class RoadSegment:
    segment_id: str
    length: float
    route_offset: float

    @property
    def end(self) -> float:
        return self.route_offset + self.length


@dataclass(frozen=True)
class GradeProfile:
    """Grade in degrees against distance in meters.

    ``distances`` are segment-relative for per-segment profiles and route
    distances for route-level ones (``segment_id == "route"``). ``valid``
    masks entries that carry a real estimate; the road sanity bound is only
    enforced on valid entries.
    """

    segment_id: str
    resolution: float
    distances: np.ndarray
    grades: np.ndarray
    valid: np.ndarray | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "distances", _frozen(self.distances))
        object.__setattr__(self, "grades", _frozen(self.grades))
        if self.valid is not None:
            object.__setattr__(self, "valid", _frozen(self.valid, dtype=bool))
        if self.resolution <= 0:
            raise TraceValidationError("resolution must be positive")
        if self.distances.ndim != 1 or self.distances.shape != self.grades.shape:
            raise TraceValidationError("distances and grades must be equal-length 1-D arrays")
        if self.valid is not None and self.valid.shape != self.grades.shape:
            raise TraceValidationError("valid mask shape mismatch")
        if self.distances.size > 1 and np.any(np.diff(self.distances) <= 0):
            raise TraceValidationError("profile distances must be strictly increasing")
        ok = self.mask
        if not np.all(np.isfinite(self.grades[ok])):
            raise TraceValidationError("non-finite grade values")
        if np.any(np.abs(self.grades[ok]) >= MAX_ROAD_GRADE_DEG):
            raise TraceValidationError(f"|grade| must be below {MAX_ROAD_GRADE_DEG:g} degrees")

    @property
    def mask(self) -> np.ndarray:
        if self.valid is None:
            return np.ones(self.grades.shape, dtype=bool)
        return self.valid

    def __len__(self) -> int:
        return int(self.distances.size)

    def at(self, x) -> np.ndarray:
        """Linear interpolation at distances ``x`` (clamped at the ends)."""
        m = self.mask
        return np.interp(x, self.distances[m], self.grades[m])

    def shifted(self, offset: float, segment_id: str | None = None) -> "GradeProfile":
        return GradeProfile(segment_id or self.segment_id, self.resolution, self.distances + offset, self.grades, self.valid)


@dataclass(frozen=True, slots=True)
class AnchorSnapshot:
    """Accelerometer grade averaged over one distance bin of one trip."""

    segment_id: str
    trip_id: str
    bin_center: float
    grade: float
    sample_count: int

    def __post_init__(self) -> None:
        if self.sample_count < 1:
            raise TraceValidationError("anchor sample_count must be >= 1")


def anchor_arrays(anchors: Sequence[AnchorSnapshot]) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(bin_centers, grades)`` arrays sorted by bin center."""
    if not anchors:
        return np.empty(0), np.empty(0)
    c = np.fromiter((a.bin_center for a in anchors), float, len(anchors))
    g = np.fromiter((a.grade for a in anchors), float, len(anchors))
    order = np.argsort(c, kind="stable")
    return c[order], g[order]


# --- file formats ---------------------------------------------------------


def _read_csv(path: Path, header: Sequence[str]) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise TraceFormatError(f"{path}: file not found")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            first = next(reader)
        except StopIteration:
            raise TraceFormatError(f"{path}: empty file") from None
        got = tuple(c.strip() for c in first)
        if got != tuple(header):
            raise TraceFormatError(f"{path}: line 1: expected header {','.join(header)!r}, got {','.join(got)!r}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise TraceFormatError(f"{path}: line {lineno}: expected {len(header)} fields, got {len(row)}")
            vals = []
            for name, cell in zip(header, row):
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise TraceFormatError(f"{path}: line {lineno}: field {name!r}: cannot parse {cell!r}") from None
            rows.append(vals)
    return np.array(rows, dtype=float).reshape(-1, len(header))


def _write_csv(path: Path, header: Sequence[str], columns: Iterable[np.ndarray]) -> None:
    data = np.column_stack([np.asarray(c, dtype=float) for c in columns])
    with Path(path).open("w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        np.savetxt(fh, data, delimiter=",", fmt="%.17g")


def manifest_path(csv_path: Path) -> Path:
    return Path(csv_path).with_suffix(".json")


def load_trace(path: str | Path) -> SensorTrace:
    """Load a trace from its IMU CSV (or its JSON manifest) and validate it.

    The manifest sits next to the CSV with the same stem and lists the speed
    files relative to its own directory.
    """
    path = Path(path)
    if path.suffix == ".json":
        mpath, cpath = path, path.with_suffix(".csv")
    else:
        mpath, cpath = manifest_path(path), path
    if not mpath.exists():
        raise TraceFormatError(f"{mpath}: manifest not found")
    try:
        manifest = json.loads(mpath.read_text())
    except json.JSONDecodeError as exc:
        raise TraceFormatError(f"{mpath}: line {exc.lineno}: invalid JSON ({exc.msg})") from None
    if not isinstance(manifest, dict):
        raise TraceFormatError(f"{mpath}: manifest must be a JSON object")
    for key in ("trip_id", "phone_id", "vehicle_id"):
        if key not in manifest:
            raise TraceFormatError(f"{mpath}: missing field {key!r}")
    if "stationary_window" not in manifest:
        raise TraceValidationError(f"{mpath}: missing stationary_window")
    speed_files = manifest.get("speed_files")
    if not isinstance(speed_files, dict) or not speed_files:
        raise TraceFormatError(f"{mpath}: field 'speed_files' must map source -> file")

    imu = _read_csv(cpath, TRACE_HEADER)
    speeds = {}
    for src, rel in speed_files.items():
        try:
            source = SpeedSource(src)
        except ValueError:
            raise TraceFormatError(f"{mpath}: field 'speed_files': unknown source {src!r}") from None
        sp = _read_csv(mpath.parent / rel, SPEED_HEADER)
        speeds[source] = SpeedSeries(sp[:, 0], sp[:, 1], source)
    win = manifest["stationary_window"]
    if not isinstance(win, list) or len(win) != 2:
        raise TraceValidationError(f"{mpath}: stationary_window must be [t0, t1]")
    return SensorTrace(
        trip_id=str(manifest["trip_id"]),
        phone_id=str(manifest["phone_id"]),
        vehicle_id=str(manifest["vehicle_id"]),
        t=imu[:, 0],
        accel=imu[:, 1:4],
        gyro=imu[:, 4:7],
        speeds=speeds,
        stationary_window=(float(win[0]), float(win[1])),
    )


def save_trace(trace: SensorTrace, path: str | Path) -> Path:
    """Write ``trace`` as ``<stem>.csv`` + ``<stem>.json`` + one CSV per speed source."""
    path = Path(path).with_suffix(".csv")
    path.parent.mkdir(parents=True, exist_ok=True)
    _write_csv(path, TRACE_HEADER, [trace.t, *trace.accel.T, *trace.gyro.T])
    speed_files = {}
    for source in sorted(trace.speeds, key=lambda s: s.value):
        s = trace.speeds[source]
        name = f"{path.stem}_{source.value}.csv"
        _write_csv(path.parent / name, SPEED_HEADER, [s.t, s.v])
        speed_files[source.value] = name
    manifest = {
        "trip_id": trace.trip_id,
        "phone_id": trace.phone_id,
        "vehicle_id": trace.vehicle_id,
        "stationary_window": [float(x) for x in trace.stationary_window],
        "speed_files": speed_files,
    }
    manifest_path(path).write_text(json.dumps(manifest, indent=2) + "\n")
    return path


def validate_route(segments: Sequence[RoadSegment]) -> list[RoadSegment]:
    segments = list(segments)
    if not segments:
        raise TraceValidationError("route has no segments")
    ids = set()
    for i, seg in enumerate(segments):
        if not (seg.length > 0 and math.isfinite(seg.length)):
            raise TraceValidationError(f"segment {seg.segment_id!r}: length must be positive")
        if seg.segment_id in ids:
            raise TraceValidationError(f"duplicate segment_id {seg.segment_id!r}")
        ids.add(seg.segment_id)
        if i:
            prev = segments[i - 1]
            if seg.route_offset <= prev.route_offset:
                raise TraceValidationError(f"segment {seg.segment_id!r}: route_offset must increase")
            if seg.route_offset < prev.end - 1e-9:
                raise TraceValidationError(f"segment {seg.segment_id!r} overlaps {prev.segment_id!r}")
    return segments


def load_route(path: str | Path) -> list[RoadSegment]:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError:
        raise TraceFormatError(f"{path}: file not found") from None
    except json.JSONDecodeError as exc:
        raise TraceFormatError(f"{path}: line {exc.lineno}: invalid JSON ({exc.msg})") from None
    if not isinstance(data, list):
        raise TraceFormatError(f"{path}: route must be a JSON array")
    segments = []
    for i, item in enumerate(data):
        try:
            segments.append(RoadSegment(str(item["segment_id"]), float(item["length_m"]), float(item["route_offset_m"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise TraceFormatError(f"{path}: entry {i}: bad or missing field ({exc})") from None
    return validate_route(segments)


def save_route(segments: Sequence[RoadSegment], path: str | Path) -> None:
    data = [{"segment_id": s.segment_id, "length_m": s.length, "route_offset_m": s.route_offset} for s in segments]
    Path(path).write_text(json.dumps(data, indent=2) + "\n")


def route_length(segments: Sequence[RoadSegment]) -> float:
    return float(segments[-1].end - segments[0].route_offset)


def load_ground_truth(path: str | Path, resolution: float | None = None) -> GradeProfile:
    data = _read_csv(Path(path), GROUND_TRUTH_HEADER)
    if data.shape[0] < 2:
        raise TraceValidationError(f"{path}: ground truth needs at least 2 rows")
    d, g = data[:, 0], data[:, 1]
    res = resolution if resolution is not None else float(np.median(np.diff(d)))
    return GradeProfile("route", res, d, g)


def save_profile_csv(profile: GradeProfile, path: str | Path, header: Sequence[str] = GROUND_TRUTH_HEADER) -> None:
    m = profile.mask
    _write_csv(Path(path), header, [profile.distances[m], profile.grades[m]])


__all__ = [
    "AnchorSnapshot",
    "GradeProfile",
    "RoadSegment",
    "SensorTrace",
    "SpeedSeries",
    "SpeedSource",
    "TraceFormatError",
    "TraceValidationError",
    "anchor_arrays",
    "load_ground_truth",
    "load_route",
    "load_trace",
    "route_length",
    "save_profile_csv",
    "save_route",
    "save_trace",
    "validate_route",
]
