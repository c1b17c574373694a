"""Multi-trip aggregation: CRH truth discovery with plain averaging as baseline.

CRH alternates two steps until the truths settle:

* truths: per-bin weighted mean of the sources observing the bin;
* weights: ``w_s = log(sum_k L_k / L_s)`` where ``L_s`` is source ``s``'s
  squared deviation from the truths, each term divided by the standard
  deviation of the observations in that bin.

Both steps minimize ``sum_s w_s L_s`` subject to ``sum_s exp(-w_s) = 1``,
so the objective never increases.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .trace_model import AnchorSnapshot, GradeProfile

DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITER = 100
BIN_ACC_M = 2.0
BIN_CORR_GYR_M = 0.2
_TINY = 1e-300


@dataclass(frozen=True)
class SourceObservations:
    source_id: str
    values: np.ndarray  # NaN marks a bin the source did not observe


@dataclass(frozen=True)
class CrhResult:
    truths: np.ndarray
    weights: np.ndarray
    iterations: int
    objective: list = field(default_factory=list)


def _matrix(observations: Sequence[SourceObservations]) -> np.ndarray:
    if not observations:
        raise ValueError("need at least one source")
    V = np.vstack([np.asarray(o.values, dtype=float) for o in observations])
    if np.any(np.all(np.isnan(V), axis=0)):
        raise ValueError("every bin must be observed by at least one source")
    return V


def bin_scale(V: np.ndarray) -> np.ndarray:
    """Per-bin observation std; single-observation or zero-spread bins use the global std."""
    obs = ~np.isnan(V)
    n = obs.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        std = np.nanstd(V, axis=0)
    glob = float(np.nanstd(V)) or 1.0
    return np.where((n > 1) & (std > 0), std, glob)


def crh(observations: Sequence[SourceObservations], tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> CrhResult:
    V = _matrix(observations)
    obs = ~np.isnan(V)
    Vz = np.where(obs, V, 0.0)
    n_src = V.shape[0]
    if n_src == 1:
        return CrhResult(V[0].copy(), np.ones(1), 1, [0.0])
    scale = bin_scale(V)

    def truths_for(w):
        W = obs * w[:, None]
        return (W * Vz).sum(axis=0) / W.sum(axis=0)

    def losses(truth):
        return (np.where(obs, (V - truth) ** 2, 0.0) / scale).sum(axis=1)

    w = np.ones(n_src)
    truth = truths_for(w)
    history = []
    it = 0
    for it in range(1, max_iter + 1):
        L = losses(truth)
        total = L.sum()
        if total <= _TINY:
            w = np.ones(n_src)
            history.append(0.0)
            break
        w = np.log(total / np.maximum(L, total * 1e-12))
        w = np.maximum(w, 1e-12)
        history.append(float(w @ L))
        new = truths_for(w)
        delta = float(np.max(np.abs(new - truth)))
        truth = new
        if delta < tol:
            break
    history.append(float(w @ losses(truth)))
    return CrhResult(truth, w, it, history)


def mean_aggregate(observations: Sequence[SourceObservations]) -> CrhResult:
    V = _matrix(observations)
    return CrhResult(np.nanmean(V, axis=0), np.ones(V.shape[0]), 1, [])


def _aggregate(observations, method: str) -> CrhResult:
    if method == "crh":
        return crh(observations)
    if method == "mean":
        return mean_aggregate(observations)
    raise ValueError(f"unknown aggregation method {method!r}")


def aggregate_anchors(
    per_trip: Mapping[str, Sequence[AnchorSnapshot]] | Sequence[Sequence[AnchorSnapshot]],
    bin_acc: float = BIN_ACC_M,
    method: str = "crh",
) -> list[AnchorSnapshot]:
    """Combine corrected anchors from many trips bin by bin, per segment.

    Output covers the union of input bins; ``sample_count`` is the total
    number of raw estimates behind each bin.
    """
    lists = list(per_trip.values()) if isinstance(per_trip, Mapping) else list(per_trip)
    by_seg: dict = defaultdict(lambda: defaultdict(dict))
    counts: dict = defaultdict(lambda: defaultdict(int))
    for i, anchors in enumerate(lists):
        for a in anchors:
            k = int(np.floor(a.bin_center / bin_acc))
            cell = by_seg[a.segment_id][k]
            if i in cell:
                # two snapshots from one trip in one bin: average them
                g, c = cell[i]
                cell[i] = ((g * c + a.grade * a.sample_count) / (c + a.sample_count), c + a.sample_count)
            else:
                cell[i] = (a.grade, a.sample_count)
            counts[a.segment_id][k] += a.sample_count
    out = []
    for seg in by_seg:
        bins = sorted(by_seg[seg])
        sources = sorted({i for k in bins for i in by_seg[seg][k]})
        col = {k: j for j, k in enumerate(bins)}
        obs = []
        for i in sources:
            vals = np.full(len(bins), np.nan)
            for k in bins:
                if i in by_seg[seg][k]:
                    vals[col[k]] = by_seg[seg][k][i][0]
            obs.append(SourceObservations(str(i), vals))
        res = _aggregate(obs, method)
        out.extend(
            AnchorSnapshot(seg, "aggregate", (k + 0.5) * bin_acc, float(res.truths[col[k]]), counts[seg][k]) for k in bins
        )
    return out


def aggregate_profiles(
    profiles: Sequence[GradeProfile],
    bin_corr_gyr: float = BIN_CORR_GYR_M,
    method: str = "crh",
    road_length: float | None = None,
) -> GradeProfile:
    """Resample profiles of one segment onto a shared grid and aggregate per point."""
    if not profiles:
        raise ValueError("no profiles to aggregate")
    seg = profiles[0].segment_id
    hi = road_length if road_length is not None else max(p.distances[p.mask].max() for p in profiles)
    grid = np.arange(0.0, hi + bin_corr_gyr / 2, bin_corr_gyr)
    grid = grid[grid <= hi + 1e-9]
    obs = []
    for i, p in enumerate(profiles):
        m = p.mask
        d, g = p.distances[m], p.grades[m]
        vals = np.interp(grid, d, g)
        vals[(grid < d[0] - 1e-9) | (grid > d[-1] + 1e-9)] = np.nan
        obs.append(SourceObservations(str(i), vals))
    V = np.vstack([o.values for o in obs])
    covered = ~np.all(np.isnan(V), axis=0)
    res = _aggregate([SourceObservations(o.source_id, o.values[covered]) for o in obs], method)
    return GradeProfile(seg, bin_corr_gyr, grid[covered], res.truths)
