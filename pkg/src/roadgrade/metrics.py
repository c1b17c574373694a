"""Accuracy metrics: absolute grade error (AE) and grade-gradient error (GE)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .trace_model import AnchorSnapshot, GradeProfile, anchor_arrays

DEFAULT_GE_STEP = 1.0


class GridMismatch(ValueError):
    pass


@dataclass(frozen=True)
class ErrorReport:
    """Per-point errors with summary statistics.

    ``unit`` is ``"deg"`` for AE and ``"deg/m"`` for GE.
    """

    kind: str
    unit: str
    distances: np.ndarray
    values: np.ndarray

    def __post_init__(self) -> None:
        if self.values.size and np.any(self.values < 0):
            raise ValueError("errors must be non-negative")

    def percentile(self, q: float) -> float:
        return float(np.percentile(self.values, q)) if self.values.size else float("nan")

    @property
    def p50(self) -> float:
        return self.percentile(50)

    @property
    def p90(self) -> float:
        return self.percentile(90)

    @property
    def mean(self) -> float:
        return float(np.mean(self.values)) if self.values.size else float("nan")

    @property
    def max(self) -> float:
        return float(np.max(self.values)) if self.values.size else float("nan")

    def summary(self) -> dict:
        return {"kind": self.kind, "unit": self.unit, "n": int(self.values.size), "p50": self.p50, "p90": self.p90, "mean": self.mean, "max": self.max}


def common_grid(a: GradeProfile, b: GradeProfile) -> np.ndarray:
    """Shared evaluation grid over the overlap of two profiles.

    The step is the coarser of the two resolutions, so the grid (and every
    metric built on it) is the same whichever profile comes first.
    """
    lo = max(a.distances[a.mask].min(), b.distances[b.mask].min())
    hi = min(a.distances[a.mask].max(), b.distances[b.mask].max())
    step = max(a.resolution, b.resolution)
    if hi - lo < step:
        raise GridMismatch(f"profiles overlap on [{lo:g}, {hi:g}] m, less than one {step:g} m step")
    n = int(np.floor((hi - lo) / step + 1e-9))
    return lo + step * np.arange(n + 1)


def absolute_error(est: GradeProfile, truth: GradeProfile) -> ErrorReport:
    x = common_grid(est, truth)
    return ErrorReport("AE", "deg", x, np.abs(est.at(x) - truth.at(x)))


def _central_slope(p: GradeProfile, x: np.ndarray, step: float) -> np.ndarray:
    return (p.at(x + step / 2) - p.at(x - step / 2)) / step


def gradient_error(est: GradeProfile, truth: GradeProfile, step: float = DEFAULT_GE_STEP) -> ErrorReport:
    """``|d est/ds - d truth/ds|`` in degrees per meter by central differences over ``step``."""
    if step <= 0:
        raise ValueError("step must be positive")
    x = common_grid(est, truth)
    x = x[(x - step / 2 >= x[0] - 1e-9) & (x + step / 2 <= x[-1] + 1e-9)]
    if x.size == 0:
        raise GridMismatch("overlap shorter than the difference step")
    return ErrorReport("GE", "deg/m", x, np.abs(_central_slope(est, x, step) - _central_slope(truth, x, step)))


def anchor_error(anchors: Sequence[AnchorSnapshot], truth: GradeProfile) -> ErrorReport:
    c, g = anchor_arrays(anchors)
    return ErrorReport("AE", "deg", c, np.abs(g - truth.at(c)))


def pool(reports: Sequence[ErrorReport]) -> ErrorReport:
    """Concatenate per-segment reports into one distribution."""
    if not reports:
        return ErrorReport("AE", "deg", np.empty(0), np.empty(0))
    kinds = {r.kind for r in reports}
    if len(kinds) != 1:
        raise ValueError("cannot pool different error kinds")
    return ErrorReport(
        reports[0].kind,
        reports[0].unit,
        np.concatenate([r.distances for r in reports]),
        np.concatenate([r.values for r in reports]),
    )
