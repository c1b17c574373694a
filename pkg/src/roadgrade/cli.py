"""Command line interface.

Every pipeline subcommand runs the stages up to its own and writes that
stage's artifacts under ``--out``:

* ``preprocess``: per-trip alignment and synchronization summary;
* ``estimate``: per-trip anchors and profiles (Indiv-Prof);
* ``aggregate``: adds aggregated anchors (Agg-Anch) and the final profile
  (Agg-Prof-Final);
* ``evaluate``: adds error reports and plots against ``--truth``, or scores
  an existing profile directory given with ``--profiles``;
* ``run``: ``aggregate``, plus ``evaluate`` when ``--truth`` is given;
* ``sweep``: the stability-threshold table;
* ``synth``: writes a synthetic world and its traces.

Settings resolve as built-in defaults, then ``--config`` JSON, then flags.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import artifacts as art
from . import synth
from .anchors import TABLE1_THRESHOLDS, StabilityThresholds
from .elevation import load_elevation, region_coverage, save_elevation
from .metrics import pool
from .pipeline import (
    PipelineConfig,
    PipelineResult,
    StageError,
    evaluate,
    prepare_trip,
    profiles_error,
    run_prepared,
    threshold_sweep,
)
from .trace_model import (
    TraceFormatError,
    TraceValidationError,
    load_ground_truth,
    load_route,
    load_trace,
    route_length,
    save_profile_csv,
    save_route,
    save_trace,
)

log = logging.getLogger("roadgrade")

# flag dest -> PipelineConfig field
_CONFIG_KEYS = ("agg", "speed_source", "acc_thresh", "jerk_thresh", "s_thresh", "d_sim", "bin_acc", "bin_corr_gyr")
# keys a config file may set, beyond the pipeline ones
_FILE_KEYS = {"route", "elevation", "out", "seed", "traces", "truth", "no_offset_correction", "no_sync", "pairs"}


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    S = argparse.SUPPRESS
    g = p.add_argument_group("global options")
    g.add_argument("--config", type=Path, default=S, help="JSON file mirroring these flags; flags win")
    g.add_argument("--route", type=Path, default=S, help="route JSON")
    g.add_argument("--elevation", type=Path, default=S, help="elevation CSV; omit to skip offset correction")
    g.add_argument("--traces", type=Path, default=S, help="directory of trace manifests (*.json)")
    g.add_argument("--truth", type=Path, default=S, help="ground-truth grade CSV (route distance)")
    g.add_argument("--out", type=Path, default=S, help="output directory")
    g.add_argument("--seed", type=int, default=S)
    g.add_argument("--agg", choices=("crh", "mean"), default=S)
    g.add_argument("--speed-source", choices=("obd", "gps"), default=S)
    g.add_argument("--acc-thresh", type=float, default=S, help="m/s^2")
    g.add_argument("--jerk-thresh", type=float, default=S, help="m/s^3")
    g.add_argument("--s-thresh", type=float, default=S, help="elevation shape similarity threshold")
    g.add_argument("--d-sim", type=float, default=S, help="similarity window length, m")
    g.add_argument("--bin-acc", type=float, default=S, help="anchor bin width, m")
    g.add_argument("--bin-corr-gyr", type=float, default=S, help="profile aggregation grid, m")
    g.add_argument("--no-offset-correction", action="store_true", default=S)
    g.add_argument("--no-sync", action="store_true", default=S)
    g.add_argument("-v", "--verbose", action="store_true", default=S)
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="roadgrade", description="Road grade estimation from vehicle sensor traces.", parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (
        ("preprocess", "align and synchronize every trace"),
        ("estimate", "per-trip anchors and profiles"),
        ("aggregate", "aggregated anchors and final profile"),
        ("run", "aggregate, then evaluate if --truth is given"),
    ):
        sub.add_parser(name, parents=[common], help=text)
    ev = sub.add_parser("evaluate", parents=[common], help="error reports against --truth")
    ev.add_argument("--profiles", type=Path, default=None, help="score segment CSVs in this directory instead of running")
    sw = sub.add_parser("sweep", parents=[common], help="stability-threshold sweep")
    sw.add_argument("--pairs", default=argparse.SUPPRESS, help="acc:jerk list, e.g. 0.5:0.1,0.7:0.15 (default: the five standard pairs)")
    sy = sub.add_parser("synth", parents=[common], help="write a synthetic world and traces")
    sy.add_argument("--world", type=Path, default=None, help="world spec JSON (default: generated from --seed)")
    sy.add_argument("--trips", type=int, default=15)
    return parser


def resolve(args: argparse.Namespace) -> dict:
    """Merge built-in defaults, the config file and explicit flags."""
    opts = {"seed": 0, "out": Path("out"), "no_offset_correction": False, "no_sync": False, "verbose": False}
    opts.update({k: getattr(PipelineConfig(), k) for k in _CONFIG_KEYS})
    given = vars(args)
    if "config" in given:
        try:
            data = json.loads(Path(given["config"]).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise StageError("config", f"{given['config']}: {exc}") from None
        if not isinstance(data, dict):
            raise StageError("config", "config file must hold a JSON object")
        norm = {k.replace("-", "_"): v for k, v in data.items()}
        unknown = set(norm) - set(_CONFIG_KEYS) - _FILE_KEYS
        if unknown:
            raise StageError("config", f"unknown keys {sorted(unknown)}")
        for k in ("route", "elevation", "out", "traces", "truth"):
            if k in norm and norm[k] is not None:
                norm[k] = Path(norm[k])
        opts.update(norm)
    opts.update({k: v for k, v in given.items() if k != "config"})
    return opts


def pipeline_config(opts: dict) -> PipelineConfig:
    kw = {k: opts[k] for k in _CONFIG_KEYS}
    try:
        return PipelineConfig(**kw, offset_correction=not opts["no_offset_correction"], sync=not opts["no_sync"])
    except (TypeError, ValueError) as exc:
        raise StageError("config", str(exc)) from None


def _require(opts: dict, *keys: str) -> None:
    missing = [k for k in keys if opts.get(k) is None]
    if missing:
        raise StageError("config", "missing " + ", ".join("--" + k.replace("_", "-") for k in missing))


def _load(stage: str, fn, *a):
    try:
        return fn(*a)
    except (TraceFormatError, TraceValidationError, OSError, ValueError) as exc:
        raise StageError(stage, str(exc)) from None


def _inputs(opts: dict):
    _require(opts, "route", "traces")
    route = _load("load", load_route, opts["route"])
    files = sorted(Path(opts["traces"]).glob("*.json"))
    if not files:
        raise StageError("load", f"{opts['traces']}: no trace manifests")
    traces = [_load("load", load_trace, f) for f in files]
    elevation = _load("load", load_elevation, opts["elevation"]) if opts.get("elevation") else None
    return route, traces, elevation


def _prepare(traces, route, config):
    preps = []
    for tr in traces:
        try:
            preps.append(prepare_trip(tr, route, config))
        except ValueError as exc:
            raise StageError("preprocess", f"trip {tr.trip_id}: {exc}") from None
    return preps


def _truth(opts: dict, route) -> dict:
    gt = _load("load", load_ground_truth, opts["truth"])
    return art.split_route_profile(gt, route)


def _stage(name: str, fn, *a):
    try:
        return fn(*a)
    except StageError:
        raise
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise StageError(name, str(exc)) from None


# -- writers ----------------------------------------------------------------


def _write_preprocess(out: Path, preps) -> None:
    summary = {
        p.trip_id: {
            "R_PC": np.asarray(p.R).tolist(),
            "sync_lag_s": float(p.lag),
            "segments": {sid: {"ticks": int(sp.a.size), "partial": bool(sp.partial)} for sid, sp in p.segments.items()},
        }
        for p in preps
    }
    art.write_report(summary, out / "preprocess.json")


def _write_estimate(out: Path, result: PipelineResult) -> None:
    for t in result.trips:
        art.write_segment_profiles(t.indiv, out / "indiv_prof" / t.trip_id)
        art.write_anchors([a for lst in t.anchors.values() for a in lst], out / "indiv_anch" / f"{t.trip_id}.csv")
    length = route_length(result.route)
    info = {
        "config": asdict(result.config),
        "regions": [asdict(r) for r in result.regions],
        "region_coverage": region_coverage(result.regions, length) if result.regions else 0.0,
        "trips": {t.trip_id: {"offset_applied": t.offset_applied, "regions": [asdict(r) for r in t.regions]} for t in result.trips},
    }
    art.write_report(info, out / "reports" / "run.json")


def _write_aggregate(out: Path, result: PipelineResult) -> None:
    art.write_anchors([a for lst in result.agg_anchors.values() for a in lst], out / "agg_anch.csv")
    art.write_segment_profiles(result.final, out / "agg_prof_final")


def _write_evaluation(out: Path, result: PipelineResult, truth: dict) -> dict:
    ev = evaluate(result, truth)
    summary = ev.summary()
    summary["median_indiv_p90"] = ev.median_indiv_p90
    art.write_report(summary, out / "reports" / "errors.json")
    plots = out / "plots"
    plots.mkdir(parents=True, exist_ok=True)
    dists = {"agg_prof_final": ev.final_ae, "agg_anch": ev.agg_anchor_ae, "indiv_prof": pool(list(ev.indiv_ae.values()))}
    series = art.write_cdf_csv(dists, plots / "ae_cdf.csv")
    (plots / "ae_cdf.svg").write_text(art.svg_line_chart(series, "Absolute error CDF", "AE (deg)", "fraction"))
    _write_profile_plot(plots, result, truth)
    return summary


def _write_profile_plot(plots: Path, result: PipelineResult, truth: dict) -> None:
    rows_d, rows_e, rows_t = [], [], []
    for seg in result.route:
        p = result.final.get(seg.segment_id)
        if p is None or seg.segment_id not in truth:
            continue
        rows_d.append(p.distances + seg.route_offset)
        rows_e.append(p.grades)
        rows_t.append(truth[seg.segment_id].at(p.distances))
    if not rows_d:
        return
    d, e, t = np.concatenate(rows_d), np.concatenate(rows_e), np.concatenate(rows_t)
    art._write_csv(plots / "final_profile.csv", ("route_distance_m", "estimate_deg", "truth_deg"), [d, e, t])
    svg = art.svg_line_chart({"truth": (d, t), "Agg-Prof-Final": (d, e)}, "Grade along the route", "route distance (m)", "grade (deg)")
    (plots / "final_profile.svg").write_text(svg)


def _parse_pairs(text: str | None) -> list[StabilityThresholds]:
    if not text:
        return list(TABLE1_THRESHOLDS)
    try:
        out = []
        for item in str(text).split(","):
            acc, jerk = item.split(":")
            out.append(StabilityThresholds(float(acc), float(jerk)))
        return out
    except ValueError as exc:
        raise StageError("config", f"bad --pairs {text!r}: {exc}") from None


# -- commands -----------------------------------------------------------------


def cmd_pipeline(opts: dict, upto: str) -> int:
    out = Path(opts["out"])
    config = pipeline_config(opts)
    route, traces, elevation = _inputs(opts)
    truth = _truth(opts, route) if opts.get("truth") else None
    if upto == "evaluate" and truth is None:
        raise StageError("config", "missing --truth")
    preps = _prepare(traces, route, config)
    out.mkdir(parents=True, exist_ok=True)
    _write_preprocess(out, preps)
    if upto == "preprocess":
        return 0
    result = _stage("estimate", run_prepared, preps, route, elevation, config)
    _write_estimate(out, result)
    if upto == "estimate":
        if truth is not None:
            reports = {t.trip_id: profiles_error(t.indiv, truth).summary() for t in result.trips}
            art.write_report(reports, out / "reports" / "indiv_errors.json")
        return 0
    _write_aggregate(out, result)
    if truth is not None:
        summary = _stage("evaluate", _write_evaluation, out, result, truth)
        f = summary["agg_prof_final"]["AE"]
        print(f"Agg-Prof-Final AE: p50 {f['p50']:.3f} deg, p90 {f['p90']:.3f} deg, mean {f['mean']:.3f} deg")
    return 0


def cmd_evaluate_profiles(opts: dict, directory: Path) -> int:
    _require(opts, "route", "truth")
    route = _load("load", load_route, opts["route"])
    truth = _truth(opts, route)
    profiles = _load("load", art.read_segment_profiles, directory)
    if not profiles:
        raise StageError("load", f"{directory}: no profile CSVs")
    ae = _stage("evaluate", profiles_error, profiles, truth)
    ge = _stage("evaluate", profiles_error, profiles, truth, "GE")
    out = Path(opts["out"])
    art.write_report({"AE": ae.summary(), "GE": ge.summary()}, out / "reports" / "profile_errors.json")
    out.joinpath("plots").mkdir(parents=True, exist_ok=True)
    series = art.write_cdf_csv({"profile": ae}, out / "plots" / "profile_ae_cdf.csv")
    (out / "plots" / "profile_ae_cdf.svg").write_text(art.svg_line_chart(series, "Absolute error CDF", "AE (deg)", "fraction"))
    print(f"AE: p50 {ae.p50:.3f} deg, p90 {ae.p90:.3f} deg, mean {ae.mean:.3f} deg")
    return 0


def cmd_sweep(opts: dict) -> int:
    _require(opts, "truth")
    config = pipeline_config(opts)
    pairs = _parse_pairs(opts.get("pairs"))
    route, traces, elevation = _inputs(opts)
    truth = _truth(opts, route)
    preps = _prepare(traces, route, config)
    try:
        rows = threshold_sweep(preps, route, elevation, truth, pairs, config)
    except ValueError as exc:
        raise StageError("sweep", str(exc)) from None
    out = Path(opts["out"])
    out.mkdir(parents=True, exist_ok=True)
    cols = [np.array([getattr(r, f.name) for r in rows], float) for f in fields(rows[0])]
    header = ("acc_thresh", "jerk_thresh", "density_per_500m", "anchor_mean_ae_deg", "final_mean_ae_deg")
    art._write_csv(out / "sweep.csv", header, cols)
    x = np.arange(len(rows), dtype=float)
    svg = art.svg_line_chart(
        {"anchor mean AE": (x, cols[3]), "final mean AE": (x, cols[4])},
        "Threshold sweep (pair index, loosest last)",
        "threshold pair",
        "mean AE (deg)",
    )
    (out / "plots").mkdir(exist_ok=True)
    (out / "plots" / "sweep.svg").write_text(svg)
    for r in rows:
        print(f"acc {r.acc_thresh:g} jerk {r.jerk_thresh:g}: density {r.density:.1f}/500 m, anchor AE {r.anchor_mean_ae:.3f}, final AE {r.final_mean_ae:.3f}")
    return 0


def cmd_synth(opts: dict, world_path: Path | None, n_trips: int) -> int:
    if n_trips < 1:
        raise StageError("synth", "--trips must be >= 1")
    seed = int(opts["seed"])
    spec = _load("synth", synth.load_world_spec, world_path) if world_path else synth.default_world_spec(seed)
    world = _stage("synth", synth.generate_world, spec)
    plans = synth.plan_trips(world, n_trips, seed)
    out = Path(opts["out"])
    (out / "traces").mkdir(parents=True, exist_ok=True)
    for sim in synth.simulate_plans(world, plans):
        save_trace(sim.trace, out / "traces" / sim.trace.trip_id)
    save_route(world.route, out / "route.json")
    save_elevation(world.elevation, out / "elevation.csv")
    save_profile_csv(world.route_truth, out / "ground_truth.csv")
    synth.save_world_spec(spec, out / "world.json")
    print(f"wrote {n_trips} trips over {world.length:.0f} m to {out}")
    return 0


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        opts = resolve(args)
        logging.basicConfig(level=logging.INFO if opts["verbose"] else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
        cmd = args.command
        if cmd == "synth":
            return cmd_synth(opts, args.world, args.trips)
        if cmd == "sweep":
            return cmd_sweep(opts)
        if cmd == "evaluate" and args.profiles is not None:
            return cmd_evaluate_profiles(opts, args.profiles)
        return cmd_pipeline(opts, {"run": "aggregate"}.get(cmd, cmd))
    except StageError as exc:
        print(f"roadgrade: stage {exc.stage} failed: {exc.message}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
