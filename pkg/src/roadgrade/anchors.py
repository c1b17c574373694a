"""Anchor snapshots: accelerometer grade kept only while driving is stable."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .pitch import PitchSeries
from .trace_model import AnchorSnapshot

DEFAULT_BIN_M = 2.0


@dataclass(frozen=True)
class StabilityThresholds:
    acc_thresh: float = 0.7
    jerk_thresh: float = 0.15

    def __post_init__(self) -> None:
        if self.acc_thresh <= 0 or self.jerk_thresh <= 0:
            raise ValueError("thresholds must be positive")


# Acceleration (m/s^2) / jerk (m/s^3) pairs swept in the threshold study.
TABLE1_THRESHOLDS = (
    StabilityThresholds(0.5, 0.1),
    StabilityThresholds(0.7, 0.15),
    StabilityThresholds(0.9, 0.2),
    StabilityThresholds(1.3, 0.3),
    StabilityThresholds(2.0, 0.5),
)


def jerk(a, dt: float) -> np.ndarray:
    return np.gradient(np.asarray(a, dtype=float), dt)


def stable_mask(a, dt: float, th: StabilityThresholds, j=None) -> np.ndarray:
    """True where ``|a| <= acc_thresh`` and ``|da/dt| <= jerk_thresh``."""
    a = np.asarray(a, dtype=float)
    j = jerk(a, dt) if j is None else j
    return (np.abs(a) <= th.acc_thresh) & (np.abs(j) <= th.jerk_thresh)


def bin_anchors(
    theta_acc: PitchSeries,
    mask,
    bin_width: float = DEFAULT_BIN_M,
    segment_id: str | None = None,
    length: float | None = None,
) -> list[AnchorSnapshot]:
    """Average stable, valid accelerometer grades into bins ``[k*w, (k+1)*w)``."""
    if bin_width <= 0:
        raise ValueError("bin_width must be positive")
    keep = np.asarray(mask, bool) & theta_acc.mask
    s = theta_acc.s[keep]
    th = theta_acc.theta[keep]
    if length is not None:
        inside = (s >= 0) & (s <= length)
        s, th = s[inside], th[inside]
    if s.size == 0:
        return []
    k = np.floor(s / bin_width).astype(np.int64)
    ks, inv = np.unique(k, return_inverse=True)
    counts = np.bincount(inv)
    means = np.bincount(inv, weights=th) / counts
    seg = segment_id if segment_id is not None else (theta_acc.segment_id or "")
    centers = ((ks + 0.5) * bin_width).tolist()
    return [AnchorSnapshot(seg, theta_acc.trip_id, c, m, n) for c, m, n in zip(centers, means.tolist(), counts.tolist())]


def density_per_500m(n_snapshots: int, length_m: float) -> float:
    return 500.0 * n_snapshots / length_m
