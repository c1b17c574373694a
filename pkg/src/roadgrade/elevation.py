"""Offset correction of anchor snapshots against coarse elevation data.

Elevation-derived grade is poor in absolute terms but, where the road
follows the terrain, its shape matches the gyroscope grade. Those regions
are found with an offset-blind similarity score and then used to measure
the constant bias of each trip's accelerometer anchors.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Mapping, Protocol, Sequence

import numpy as np

from .trace_model import AnchorSnapshot, GradeProfile, TraceValidationError, _read_csv, _write_csv

ELEVATION_HEADER = ("route_distance_m", "elevation_m")
DEFAULT_D_SIM = 200.0
DEFAULT_S_THRESH = 0.7
MIN_REGION_ANCHORS = 3


@dataclass(frozen=True)
class ElevationProfile:
    distances: np.ndarray
    elevations: np.ndarray

    def __post_init__(self) -> None:
        d = np.asarray(self.distances, float)
        e = np.asarray(self.elevations, float)
        if d.shape != e.shape or d.ndim != 1:
            raise TraceValidationError("elevation distances and values must be equal-length 1-D arrays")
        if d.size > 1 and np.any(np.diff(d) <= 0):
            raise TraceValidationError("elevation distances must be strictly increasing")
        object.__setattr__(self, "distances", d)
        object.__setattr__(self, "elevations", e)


@dataclass(frozen=True)
class SimilarityRegion:
    x_strt: float
    x_end: float
    similarity: float
    offset: float | None = None

    def __post_init__(self) -> None:
        if not self.x_strt < self.x_end:
            raise ValueError("region must have x_strt < x_end")

    @property
    def center(self) -> float:
        return 0.5 * (self.x_strt + self.x_end)

    @property
    def length(self) -> float:
        return self.x_end - self.x_strt


def load_elevation(path: str | Path) -> ElevationProfile:
    data = _read_csv(Path(path), ELEVATION_HEADER)
    return ElevationProfile(data[:, 0], data[:, 1])


def save_elevation(profile: ElevationProfile, path: str | Path) -> None:
    _write_csv(Path(path), ELEVATION_HEADER, [profile.distances, profile.elevations])


def grade_from_elevation(profile: ElevationProfile, resolution: float | None = None) -> GradeProfile:
    """Grade ``arcsin(dE / D)`` between consecutive samples, placed at interval midpoints.

    Rises steeper than the distance (occlusion artifacts) clamp to +/-90 deg
    and are marked invalid. With ``resolution``, valid midpoint values are
    linearly interpolated onto a regular grid spanning the midpoints.
    """
    d, e = profile.distances, profile.elevations
    if d.size < 2:
        raise ValueError("need at least 2 elevation samples")
    D = np.diff(d)
    if np.any(D <= 0):
        raise ValueError("zero spacing between elevation samples")
    ratio = np.diff(e) / D
    valid = np.abs(ratio) <= 1.0
    grade = np.degrees(np.arcsin(np.clip(ratio, -1.0, 1.0)))
    mid = d[:-1] + D / 2
    # steep but physically possible rises are also not road grade
    valid &= np.abs(grade) < 45.0
    if resolution is None:
        spacing = float(np.median(D))
        return GradeProfile("route", spacing, mid, grade, valid)
    if not np.any(valid):
        raise ValueError("no valid elevation intervals")
    grid = np.arange(mid[0], mid[-1] + resolution / 2, resolution)
    return GradeProfile("route", resolution, grid, np.interp(grid, mid[valid], grade[valid]))


def shape_similarity(P, Q) -> float:
    """Offset-blind shape score ``1 / 2**var(P - Q)`` in ``(0, 1]`` (variance in deg^2)."""
    P = np.asarray(P, dtype=float)
    Q = np.asarray(Q, dtype=float)
    if P.shape != Q.shape:
        raise ValueError(f"length mismatch: {P.shape} vs {Q.shape}")
    if P.size < 2:
        raise ValueError("need at least 2 samples")
    return float(2.0 ** (-np.var(P - Q)))


def _xy(series) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(series, GradeProfile):
        m = series.mask
        return series.distances[m], series.grades[m]
    m = series.mask
    return series.s[m], series.theta[m]


def similarity_windows(
    elev_grade: GradeProfile,
    gyro_grades: Sequence,
    d_sim: float = DEFAULT_D_SIM,
    overlap: float = 0.5,
) -> tuple[np.ndarray, np.ndarray]:
    """Window starts and trip-averaged similarity (NaN where no trip covers a window)."""
    x = elev_grade.distances[elev_grade.mask]
    P_all = elev_grade.grades[elev_grade.mask]
    step = d_sim * (1.0 - overlap)
    starts = np.arange(x[0] - (x[0] % step), x[-1], step) if x.size else np.empty(0)
    curves = [_xy(g) for g in gyro_grades]
    sims = np.full(starts.size, np.nan)
    for i, w0 in enumerate(starts):
        sel = (x >= w0) & (x <= w0 + d_sim)
        if np.count_nonzero(sel) < 2:
            continue
        xs, P = x[sel], P_all[sel]
        vals = []
        for s, th in curves:
            if s.size < 2 or xs[0] < s[0] or xs[-1] > s[-1]:
                continue
            vals.append(shape_similarity(P, np.interp(xs, s, th)))
        if vals:
            sims[i] = float(np.mean(vals))
    return starts, sims


def extract_regions(
    elev_grade: GradeProfile,
    gyro_grades: Sequence,
    d_sim: float = DEFAULT_D_SIM,
    s_thresh: float = DEFAULT_S_THRESH,
    overlap: float = 0.5,
) -> list[SimilarityRegion]:
    """Merge runs of windows whose trip-averaged similarity reaches ``s_thresh``.

    ``gyro_grades`` are route-distance grade curves (``GradeProfile`` or
    ``PitchSeries``), one per trip; each is compared on the elevation grid
    points falling inside the window.
    """
    starts, sims = similarity_windows(elev_grade, gyro_grades, d_sim, overlap)
    good = np.nan_to_num(sims, nan=0.0) >= s_thresh
    regions = []
    i = 0
    while i < starts.size:
        if not good[i]:
            i += 1
            continue
        j = i
        while j + 1 < starts.size and good[j + 1] and starts[j + 1] <= starts[j] + d_sim:
            j += 1
        regions.append(SimilarityRegion(float(starts[i]), float(starts[j] + d_sim), float(np.mean(sims[i : j + 1]))))
        i = j + 1
    return regions


def _route_positions(anchors: Sequence[AnchorSnapshot], segment_offsets: Mapping[str, float] | None) -> np.ndarray:
    offs = segment_offsets or {}
    return np.array([offs.get(a.segment_id, 0.0) + a.bin_center for a in anchors], dtype=float)


def region_offset(
    anchors: Sequence[AnchorSnapshot],
    elev_grade: GradeProfile,
    region: SimilarityRegion,
    segment_offsets: Mapping[str, float] | None = None,
    min_anchors: int = MIN_REGION_ANCHORS,
) -> float | None:
    """Mean of ``anchor - elevation grade`` over anchors inside ``region``.

    Returns None when fewer than ``min_anchors`` snapshots fall inside.
    """
    if not anchors:
        return None
    pos = _route_positions(anchors, segment_offsets)
    sel = (pos >= region.x_strt) & (pos <= region.x_end)
    if np.count_nonzero(sel) < min_anchors:
        return None
    A = np.array([a.grade for a in anchors])[sel]
    G = elev_grade.at(pos[sel])
    return float(np.mean(A - G))


def trip_offsets(
    anchors: Sequence[AnchorSnapshot],
    elev_grade: GradeProfile,
    regions: Sequence[SimilarityRegion],
    segment_offsets: Mapping[str, float] | None = None,
) -> list[SimilarityRegion]:
    """Regions usable for one trip, each carrying that trip's offset."""
    out = []
    for r in regions:
        off = region_offset(anchors, elev_grade, r, segment_offsets)
        if off is not None:
            out.append(replace(r, offset=off))
    return out


def apply_offsets(
    anchors: Sequence[AnchorSnapshot],
    regions: Sequence[SimilarityRegion],
    segment_offsets: Mapping[str, float] | None = None,
    sign: float = 1.0,
) -> tuple[list[AnchorSnapshot], bool]:
    """Subtract the nearest usable region's offset from each snapshot.

    Returns ``(anchors, corrected)``; with no usable region the snapshots
    pass through unchanged and ``corrected`` is False. ``sign=-1`` undoes a
    previous correction.
    """
    usable = [r for r in regions if r.offset is not None]
    if not usable or not anchors:
        return list(anchors), False
    centers = np.array([r.center for r in usable])
    offsets = np.array([r.offset for r in usable])
    pos = _route_positions(anchors, segment_offsets)
    # argmin picks the first (earlier) region on ties
    nearest = np.argmin(np.abs(pos[:, None] - centers[None, :]), axis=1)
    shift = (sign * offsets[nearest]).tolist()
    return [AnchorSnapshot(a.segment_id, a.trip_id, a.bin_center, a.grade - d, a.sample_count) for a, d in zip(anchors, shift)], True


def region_coverage(regions: Sequence[SimilarityRegion], route_length: float) -> float:
    return sum(r.length for r in regions) / route_length


class ElevationClient(Protocol):
    def fetch(self, lat: Sequence[float], lon: Sequence[float]) -> list[float]: ...


class CachedElevationFetcher:
    """Disk-cached wrapper around any elevation client.

    Lookups are keyed by the rounded coordinate list, so a query is sent to
    the underlying client at most once per cache directory.
    """

    def __init__(self, client: ElevationClient | Callable, cache_dir: str | Path):
        self._fetch = client.fetch if hasattr(client, "fetch") else client
        self.cache_dir = Path(cache_dir)
        self.cache_dir.mkdir(parents=True, exist_ok=True)

    def _key(self, lat, lon) -> Path:
        payload = json.dumps([[round(a, 7) for a in lat], [round(b, 7) for b in lon]])
        return self.cache_dir / (hashlib.sha256(payload.encode()).hexdigest() + ".json")

    def fetch(self, lat: Sequence[float], lon: Sequence[float]) -> list[float]:
        if len(lat) != len(lon):
            raise ValueError("lat and lon must have equal length")
        path = self._key(lat, lon)
        if path.exists():
            return json.loads(path.read_text())
        values = [float(v) for v in self._fetch(list(lat), list(lon))]
        if len(values) != len(lat):
            raise ValueError("elevation client returned wrong number of values")
        path.write_text(json.dumps(values))
        return values
