"""On-disk outputs: profiles, anchors, error reports, plot CSVs and SVG charts."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Mapping, Sequence
from xml.sax.saxutils import escape

import numpy as np

from .metrics import ErrorReport
from .trace_model import GradeProfile, RoadSegment, _write_csv, save_profile_csv

PROFILE_HEADER = ("distance_m", "grade_deg")
ANCHOR_HEADER = ("segment_id", "trip_id", "bin_center_m", "grade_deg", "sample_count")


def split_route_profile(profile: GradeProfile, route: Sequence[RoadSegment]) -> dict:
    """Cut a route-distance profile into segment-relative profiles."""
    out = {}
    d, g = profile.distances[profile.mask], profile.grades[profile.mask]
    for k, seg in enumerate(route):
        last = k == len(route) - 1
        sel = (d >= seg.route_offset) & ((d <= seg.end) if last else (d < seg.end))
        if np.count_nonzero(sel) >= 2:
            out[seg.segment_id] = GradeProfile(seg.segment_id, profile.resolution, d[sel] - seg.route_offset, g[sel])
    return out


def write_segment_profiles(profiles: Mapping[str, GradeProfile], directory: Path) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    for sid, p in profiles.items():
        save_profile_csv(p, directory / f"{sid}.csv", PROFILE_HEADER)


def write_anchors(anchors: Sequence, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        fh.write(",".join(ANCHOR_HEADER) + "\n")
        for a in sorted(anchors, key=lambda a: (a.segment_id, a.bin_center)):
            fh.write(f"{a.segment_id},{a.trip_id},{a.bin_center:.17g},{a.grade:.17g},{a.sample_count}\n")


def read_segment_profiles(directory: Path) -> dict:
    from .trace_model import _read_csv

    out = {}
    for f in sorted(Path(directory).glob("*.csv")):
        data = _read_csv(f, PROFILE_HEADER)
        res = float(np.median(np.diff(data[:, 0]))) if data.shape[0] > 1 else 1.0
        out[f.stem] = GradeProfile(f.stem, res, data[:, 0], data[:, 1])
    return out


def write_report(reports: Mapping[str, dict], path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(reports, indent=2, sort_keys=True) + "\n")


def ecdf(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    v = np.sort(np.asarray(values, dtype=float))
    return v, np.arange(1, v.size + 1) / max(v.size, 1)


def write_cdf_csv(reports: Mapping[str, ErrorReport], path: Path, points: int = 200) -> dict:
    """AE distribution per stage at ``points`` quantiles; returns the plotted series."""
    q = np.linspace(0.0, 1.0, points)
    series = {}
    cols = [q]
    for name, r in reports.items():
        x = np.quantile(r.values, q) if r.values.size else np.full(q.shape, np.nan)
        series[name] = (x, q)
        cols.append(x)
    _write_csv(path, ("fraction", *[f"{k}_deg" for k in reports]), cols)
    return series


def svg_line_chart(
    series: Mapping[str, tuple],
    title: str,
    xlabel: str,
    ylabel: str,
    width: int = 640,
    height: int = 400,
) -> str:
    """Minimal static multi-line chart."""
    colors = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"]
    ml, mr, mt, mb = 60, 20, 30, 45
    xs = np.concatenate([np.asarray(x, float) for x, _ in series.values()]) if series else np.array([0.0, 1.0])
    ys = np.concatenate([np.asarray(y, float) for _, y in series.values()]) if series else np.array([0.0, 1.0])
    ok = np.isfinite(xs) & np.isfinite(ys)
    x0, x1 = (xs[ok].min(), xs[ok].max()) if ok.any() else (0.0, 1.0)
    y0, y1 = (ys[ok].min(), ys[ok].max()) if ok.any() else (0.0, 1.0)
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y1 = y0 + 1.0
    pw, ph = width - ml - mr, height - mt - mb

    def px(x):
        return ml + (x - x0) / (x1 - x0) * pw

    def py(y):
        return mt + ph - (y - y0) / (y1 - y0) * ph

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="12">',
        f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>',
        f'<text x="{width / 2}" y="18" text-anchor="middle">{escape(title)}</text>',
        f'<text x="{width / 2}" y="{height - 8}" text-anchor="middle">{escape(xlabel)}</text>',
        f'<text x="14" y="{mt + ph / 2}" text-anchor="middle" transform="rotate(-90 14 {mt + ph / 2})">{escape(ylabel)}</text>',
    ]
    for v in np.linspace(x0, x1, 5):
        parts.append(f'<text x="{px(v):.1f}" y="{mt + ph + 15}" text-anchor="middle">{v:.3g}</text>')
    for v in np.linspace(y0, y1, 5):
        parts.append(f'<text x="{ml - 5}" y="{py(v) + 4:.1f}" text-anchor="end">{v:.3g}</text>')
    for i, (name, (x, y)) in enumerate(series.items()):
        x, y = np.asarray(x, float), np.asarray(y, float)
        good = np.isfinite(x) & np.isfinite(y)
        step = max(1, int(good.sum() // 2000))
        pts = " ".join(f"{px(a):.1f},{py(b):.1f}" for a, b in zip(x[good][::step], y[good][::step]))
        c = colors[i % len(colors)]
        parts.append(f'<polyline fill="none" stroke="{c}" stroke-width="1.2" points="{pts}"/>')
        parts.append(f'<text x="{ml + 8}" y="{mt + 16 + 14 * i}" fill="{c}">{escape(name)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
