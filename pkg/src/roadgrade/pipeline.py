"""End-to-end grade estimation over a set of trips.

Stages, per trip: filtering and synchronization, alignment, accelerometer
and gyroscope grade per segment, anchor snapshots, elevation offset
correction and drift correction (Indiv-Prof). Across trips: anchor
aggregation (Agg-Anch), drift correction of every trip against the
aggregated anchors and profile aggregation (Agg-Prof-Final).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from . import aggregate as agg
from .align import align_trip
from .anchors import StabilityThresholds, bin_anchors, density_per_500m, jerk, stable_mask
from .elevation import (
    DEFAULT_D_SIM,
    DEFAULT_S_THRESH,
    ElevationProfile,
    SimilarityRegion,
    apply_offsets,
    extract_regions,
    grade_from_elevation,
    trip_offsets,
)
from .fuse import DEFAULT_RESOLUTION, drift_correct
from .metrics import ErrorReport, absolute_error, anchor_error, gradient_error, pool
from .pitch import PitchSeries, PitchSource, accel_pitch_series, pitch_gyro
from .preprocess import FilterSpec, _speed_filter, preprocess, segment_indices, segment_slice
from .trace_model import AnchorSnapshot, GradeProfile, RoadSegment, SensorTrace, SpeedSource

log = logging.getLogger(__name__)

HOLD_BELOW_SPEED = 0.1
MIN_SLICE_TICKS = 50


class StageError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"{stage}: {message}")
        self.stage = stage
        self.message = message


@dataclass(frozen=True)
class PipelineConfig:
    acc_thresh: float = 0.7
    jerk_thresh: float = 0.15
    s_thresh: float = DEFAULT_S_THRESH
    d_sim: float = DEFAULT_D_SIM
    bin_acc: float = agg.BIN_ACC_M
    bin_corr_gyr: float = agg.BIN_CORR_GYR_M
    agg: str = "crh"
    speed_source: str = "obd"
    offset_correction: bool = True
    sync: bool = True
    resolution: float = DEFAULT_RESOLUTION

    @property
    def thresholds(self) -> StabilityThresholds:
        return StabilityThresholds(self.acc_thresh, self.jerk_thresh)


@dataclass
class SegmentPrep:
    segment_id: str
    length: float
    gyro: PitchSeries
    accel: PitchSeries
    a: np.ndarray
    j: np.ndarray
    dt: float
    partial: bool


@dataclass
class TripPrep:
    """Threshold-independent per-trip state."""

    trip_id: str
    R: np.ndarray
    lag: float
    segments: dict  # segment_id -> SegmentPrep


@dataclass
class TripResult:
    trip_id: str
    raw_anchors: dict
    anchors: dict  # offset-corrected
    regions: list
    offset_applied: bool
    indiv: dict  # segment_id -> GradeProfile
    agg_anch_prof: dict = field(default_factory=dict)


@dataclass
class PipelineResult:
    config: PipelineConfig
    route: list
    preps: list
    trips: list
    regions: list
    agg_anchors: dict  # segment_id -> list[AnchorSnapshot]
    final: dict  # segment_id -> GradeProfile

    def trip(self, trip_id: str) -> TripResult:
        return next(t for t in self.trips if t.trip_id == trip_id)


def prepare_trip(trace: SensorTrace, route: Sequence[RoadSegment], config: PipelineConfig) -> TripPrep:
    source = SpeedSource(config.speed_source)
    spec = FilterSpec(sample_rate_hz=1.0 / trace.dt)
    trip = preprocess(trace, source, spec, sync=config.sync)
    R = align_trip(trace, trip)
    sfilt = _speed_filter(spec, source)
    theta_acc, a = accel_pitch_series(trip, R, sfilt)
    j = jerk(a, trip.dt)
    segs = {}
    for seg, idx, sl in zip(route, segment_indices(trip, route), segment_slice(trip, route)):
        if idx.size < MIN_SLICE_TICKS:
            continue
        acc = PitchSeries(sl.s, theta_acc.theta[idx], PitchSource.ACCEL, trip.trip_id, theta_acc.mask[idx], seg.segment_id)
        gyro = pitch_gyro(sl, R, hold_below_speed=HOLD_BELOW_SPEED)
        segs[seg.segment_id] = SegmentPrep(seg.segment_id, seg.length, gyro, acc, a[idx], j[idx], trip.dt, sl.partial)
    return TripPrep(trace.trip_id, R, trip.lag, segs)


def _anchors_for(prep: TripPrep, config: PipelineConfig) -> dict:
    th = config.thresholds
    out = {}
    for sid, sp in prep.segments.items():
        mask = stable_mask(sp.a, sp.dt, th, sp.j)
        out[sid] = bin_anchors(sp.accel, mask, config.bin_acc, sid, sp.length)
    return out


def _with_theta0(sp: SegmentPrep, anchors: Sequence[AnchorSnapshot]) -> PitchSeries:
    """Gyro series started from the first anchor's grade."""
    if not anchors:
        return sp.gyro
    first = min(anchors, key=lambda a: a.bin_center)
    return replace(sp.gyro, theta=sp.gyro.theta - sp.gyro.theta[0] + first.grade)


def _correct(prep: TripPrep, anchors: Mapping[str, Sequence[AnchorSnapshot]], config: PipelineConfig, theta0_from=None) -> dict:
    out = {}
    for sid, sp in prep.segments.items():
        anc = anchors.get(sid, [])
        gyro = _with_theta0(sp, (theta0_from or anchors).get(sid, []))
        out[sid] = drift_correct(gyro, anc, sp.length, config.resolution)[0]
    return out


def route_profile(profiles: Mapping[str, GradeProfile], route: Sequence[RoadSegment]) -> GradeProfile | None:
    """Stitch per-segment profiles into one route-distance profile."""
    d, g = [], []
    last = -np.inf
    for seg in route:
        p = profiles.get(seg.segment_id)
        if p is None:
            continue
        m = p.mask
        x = p.distances[m] + seg.route_offset
        keep = x > last + 1e-9
        d.append(x[keep])
        g.append(p.grades[m][keep])
        if keep.any():
            last = x[keep][-1]
    if not d or sum(a.size for a in d) < 2:
        return None
    return GradeProfile("route", profiles[next(iter(profiles))].resolution, np.concatenate(d), np.concatenate(g))


def _flatten(anchors: Mapping[str, Sequence[AnchorSnapshot]]) -> list:
    return [a for lst in anchors.values() for a in lst]


def _by_segment(anchors: Sequence[AnchorSnapshot]) -> dict:
    out: dict = {}
    for a in anchors:
        out.setdefault(a.segment_id, []).append(a)
    return out


def run_prepared(
    preps: Sequence[TripPrep],
    route: Sequence[RoadSegment],
    elevation: ElevationProfile | None,
    config: PipelineConfig,
) -> PipelineResult:
    offsets = {s.segment_id: s.route_offset for s in route}
    raw = {p.trip_id: _anchors_for(p, config) for p in preps}

    regions: list = []
    if config.offset_correction and elevation is not None:
        elev_grade = grade_from_elevation(elevation)
        shapes = [route_profile(_correct(p, raw[p.trip_id], config), route) for p in preps]
        regions = extract_regions(elev_grade, [s for s in shapes if s is not None], config.d_sim, config.s_thresh)

    trips = []
    for p in preps:
        anchors, applied, usable = raw[p.trip_id], False, []
        if regions:
            flat = _flatten(raw[p.trip_id])
            usable = trip_offsets(flat, elev_grade, regions, offsets)
            corrected, applied = apply_offsets(flat, usable, offsets)
            anchors = {sid: [] for sid in raw[p.trip_id]}
            anchors.update(_by_segment(corrected))
        trips.append(TripResult(p.trip_id, raw[p.trip_id], anchors, usable, applied, _correct(p, anchors, config)))

    agg_anchors = {}
    for seg in route:
        per_trip = [t.anchors.get(seg.segment_id, []) for t in trips]
        per_trip = [a for a in per_trip if a]
        if per_trip:
            agg_anchors[seg.segment_id] = agg.aggregate_anchors(per_trip, config.bin_acc, config.agg)

    final = {}
    for p, t in zip(preps, trips):
        t.agg_anch_prof = _correct(p, agg_anchors, config, theta0_from=t.anchors)
    for seg in route:
        profs = [t.agg_anch_prof[seg.segment_id] for t in trips if seg.segment_id in t.agg_anch_prof]
        if profs:
            final[seg.segment_id] = agg.aggregate_profiles(profs, config.bin_corr_gyr, config.agg, seg.length)
    return PipelineResult(config, list(route), list(preps), trips, regions, agg_anchors, final)


def run_pipeline(
    traces: Sequence[SensorTrace],
    route: Sequence[RoadSegment],
    elevation: ElevationProfile | None,
    config: PipelineConfig = PipelineConfig(),
) -> PipelineResult:
    preps = []
    for tr in traces:
        try:
            preps.append(prepare_trip(tr, route, config))
        except ValueError as exc:
            raise StageError("preprocess", f"trip {tr.trip_id}: {exc}") from exc
    return run_prepared(preps, route, elevation, config)


# -- evaluation -----------------------------------------------------------


def profiles_error(profiles: Mapping[str, GradeProfile], truth: Mapping[str, GradeProfile], kind: str = "AE") -> ErrorReport:
    fn = absolute_error if kind == "AE" else gradient_error
    return pool([fn(p, truth[sid]) for sid, p in profiles.items() if sid in truth])


def anchors_error(anchors: Mapping[str, Sequence[AnchorSnapshot]], truth: Mapping[str, GradeProfile]) -> ErrorReport:
    return pool([anchor_error(a, truth[sid]) for sid, a in anchors.items() if a and sid in truth])


@dataclass(frozen=True)
class Evaluation:
    final_ae: ErrorReport
    final_ge: ErrorReport
    indiv_ae: dict  # trip_id -> ErrorReport
    agg_anchor_ae: ErrorReport
    indiv_anchor_ae: dict

    @property
    def median_indiv_p90(self) -> float:
        return float(np.median([r.p90 for r in self.indiv_ae.values()]))

    def summary(self) -> dict:
        return {
            "agg_prof_final": {"AE": self.final_ae.summary(), "GE": self.final_ge.summary()},
            "agg_anch": self.agg_anchor_ae.summary(),
            "indiv_prof": {k: v.summary() for k, v in self.indiv_ae.items()},
            "indiv_anch": {k: v.summary() for k, v in self.indiv_anchor_ae.items()},
        }


def evaluate(result: PipelineResult, truth: Mapping[str, GradeProfile]) -> Evaluation:
    return Evaluation(
        profiles_error(result.final, truth),
        profiles_error(result.final, truth, "GE"),
        {t.trip_id: profiles_error(t.indiv, truth) for t in result.trips},
        anchors_error(result.agg_anchors, truth),
        {t.trip_id: anchors_error(t.anchors, truth) for t in result.trips},
    )


@dataclass(frozen=True)
class SweepRow:
    acc_thresh: float
    jerk_thresh: float
    density: float  # anchors per 500 m, averaged over trips
    anchor_mean_ae: float
    final_mean_ae: float


def threshold_sweep(
    preps: Sequence[TripPrep],
    route: Sequence[RoadSegment],
    elevation: ElevationProfile | None,
    truth: Mapping[str, GradeProfile],
    pairs: Sequence[StabilityThresholds],
    config: PipelineConfig = PipelineConfig(),
) -> list[SweepRow]:
    if len(pairs) < 2:
        raise ValueError("a sweep needs at least 2 threshold pairs")
    length = sum(s.length for s in route)
    rows = []
    for th in pairs:
        cfg = replace(config, acc_thresh=th.acc_thresh, jerk_thresh=th.jerk_thresh)
        res = run_prepared(preps, route, elevation, cfg)
        dens = np.mean([density_per_500m(len(_flatten(t.anchors)), length) for t in res.trips])
        anc = pool([anchors_error(t.anchors, truth) for t in res.trips])
        rows.append(SweepRow(th.acc_thresh, th.jerk_thresh, float(dens), anc.mean, profiles_error(res.final, truth).mean))
    return rows
