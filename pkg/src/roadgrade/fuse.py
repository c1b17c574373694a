"""Windowed gyroscope drift correction against anchor snapshots."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .pitch import PitchSeries
from .trace_model import AnchorSnapshot, GradeProfile, anchor_arrays

BLEND_M = 10.0
DEFAULT_RESOLUTION = 0.2


class InsufficientAnchors(ValueError):
    pass


@dataclass(frozen=True)
class DriftFit:
    window: tuple[float, float]
    slope: float
    intercept: float
    anchor_count: int

    def __call__(self, s):
        return self.slope * np.asarray(s, dtype=float) + self.intercept


def drift_window(road_length: float, anchor_gaps) -> float:
    """Window width ``max(road_length / 3, max(anchor_gaps))``."""
    gaps = np.asarray(anchor_gaps, dtype=float)
    if road_length <= 0:
        raise ValueError("road length must be positive")
    if gaps.size == 0:
        raise InsufficientAnchors("insufficient anchors: need at least two to measure gaps")
    return float(max(road_length / 3.0, gaps.max()))


MIN_SPAN_FRACTION = 0.25


def tile_windows(road_length: float, width: float, centers, min_span_fraction: float = MIN_SPAN_FRACTION) -> list[tuple[float, float]]:
    """Tile ``[0, road_length]`` with windows of ``width``; merge sparse ones.

    A trailing remnant shorter than ``width`` joins its predecessor. A
    window is sparse when it holds fewer than two anchor centers or when its
    anchors span less than ``min_span_fraction`` of the window (a line
    through a tight cluster extrapolates wildly). Sparse windows merge
    rightward, the last one leftward, until none is left or one window
    covers the segment.
    """
    n = max(1, int(np.floor(road_length / width + 1e-9)))
    edges = [i * width for i in range(n)] + [road_length]
    wins = [[edges[i], edges[i + 1]] for i in range(n)]
    c = np.asarray(centers, dtype=float)

    def sparse(w):
        last = w[1] >= road_length
        inside = c[(c >= w[0]) & ((c <= w[1]) if last else (c < w[1]))]
        if inside.size < 2:
            return True
        return inside.max() - inside.min() < min_span_fraction * (w[1] - w[0])

    while len(wins) > 1:
        short = [k for k, w in enumerate(wins) if sparse(w)]
        if not short:
            break
        k = short[0]
        if k + 1 < len(wins):
            wins[k + 1][0] = wins[k][0]
        else:
            wins[k - 1][1] = wins[k][1]
        del wins[k]
    return [(float(a), float(b)) for a, b in wins]


def fit_drift(gyro: PitchSeries, anchors: Sequence[AnchorSnapshot], window) -> DriftFit:
    """Least-squares line through ``gyro(center) - anchor`` for anchors in ``window``."""
    return _fit_arrays(gyro, *anchor_arrays(anchors), window)


def _fit_arrays(gyro: PitchSeries, c: np.ndarray, g: np.ndarray, window) -> DriftFit:
    w0, w1 = window
    sel = (c >= w0) & (c <= w1)
    if np.count_nonzero(sel) < 2:
        raise InsufficientAnchors(f"window [{w0:g}, {w1:g}] has fewer than 2 anchors")
    x = c[sel]
    d = gyro.on_grid(x) - g[sel]
    A = np.column_stack([x, np.ones_like(x)])
    (slope, intercept), *_ = np.linalg.lstsq(A, d, rcond=None)
    return DriftFit((float(w0), float(w1)), float(slope), float(intercept), int(x.size))


def correction_curve(fits: Sequence[DriftFit], x, blend: float = BLEND_M) -> np.ndarray:
    """Piecewise-linear drift with linear cross-fades of width ``blend`` at window joints."""
    x = np.asarray(x, dtype=float)
    if not fits:
        return np.zeros_like(x)
    out = fits[0](x)
    for left, right in zip(fits[:-1], fits[1:]):
        joint = right.window[0]
        w = np.clip((x - (joint - blend / 2)) / blend, 0.0, 1.0) if blend > 0 else (x >= joint).astype(float)
        out = (1 - w) * out + w * right(x)
    return out


def correct_profile(
    gyro: PitchSeries,
    fits: Sequence[DriftFit],
    road_length: float | None = None,
    resolution: float = DEFAULT_RESOLUTION,
    blend: float = BLEND_M,
    segment_id: str | None = None,
) -> GradeProfile:
    """Gyro grade minus fitted drift, resampled to ``resolution`` meters."""
    m = gyro.mask
    if road_length is None:
        road_length = float(gyro.s[m].max())
    grid = np.arange(0.0, road_length + resolution / 2, resolution)
    grid = grid[grid <= road_length + 1e-9]
    lo, hi = gyro.s[m].min(), gyro.s[m].max()
    grid = grid[(grid >= lo - resolution) & (grid <= hi + resolution)]
    values = gyro.on_grid(grid) - correction_curve(fits, grid, blend)
    return GradeProfile(segment_id or gyro.segment_id or "", resolution, grid, values)


def drift_correct(
    gyro: PitchSeries,
    anchors: Sequence[AnchorSnapshot],
    road_length: float,
    resolution: float = DEFAULT_RESOLUTION,
    blend: float = BLEND_M,
) -> tuple[GradeProfile, list[DriftFit]]:
    """Fit and remove drift over one segment.

    With a single anchor only a constant shift is applied; with none the
    gyro series passes through unchanged.
    """
    c, g = anchor_arrays(anchors)
    if c.size == 0:
        return correct_profile(gyro, [], road_length, resolution, blend), []
    if c.size == 1:
        d = float(gyro.on_grid(c)[0] - g[0])
        fit = DriftFit((0.0, road_length), 0.0, d, 1)
        return correct_profile(gyro, [fit], road_length, resolution, blend), [fit]
    width = drift_window(road_length, np.diff(c))
    fits = [_fit_arrays(gyro, c, g, w) for w in tile_windows(road_length, width, c)]
    return correct_profile(gyro, fits, road_length, resolution, blend), fits
