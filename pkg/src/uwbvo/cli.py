"""Command-line front end: simulate, run, compare, calibrate.

Outputs are deterministic byte-for-byte for a fixed invocation: no
wall-clock timestamps are written, floats use fixed formats, and rows are
sorted. Exit codes: 0 success, 1 usage error, 2 experiment failure (failed
cells are recorded and the batch continues).

Typical flow::

    uwbvo simulate --scenario worst-case --seeds 10 --out runs/wc
    uwbvo run --logs runs/wc --method all --jobs 4
    uwbvo compare runs/wc
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .baselines import BaselineKind, run_method
from .clustering import ClusterParams
from .config import ConfigError, load_config, resolve_scenario, save_config
from .core import read_log, write_log
from .metrics import (
    COMPARE_HEADER,
    REPORT_HEADER,
    RunReport,
    compare,
    compare_rows,
    render_table,
    report_row,
    stop_accuracy,
)
from .pipeline import PipelineParams, StopDetectionFailure
from .simulate import ScenarioConfig, build_truth, sample_times, simulate_pair

USAGE_ERROR = 1
EXPERIMENT_ERROR = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # exit 1 on usage errors
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(USAGE_ERROR)


def _add_param_overrides(p: argparse.ArgumentParser) -> None:
    p.add_argument("--beta-mm", type=float, help="mutual-error threshold")
    p.add_argument("--gamma-mm", type=float, help="stop-region activation radius")
    p.add_argument("--alpha-mm", type=float, help="max intracluster distance")
    p.add_argument("--k1", type=int, help="cluster-suspicion neighbor count")
    p.add_argument("--k2", type=int, help="cluster-termination neighbor count")


def _apply_overrides(params: PipelineParams, args) -> PipelineParams:
    cl = params.cluster
    cl = ClusterParams(
        alpha_mm=args.alpha_mm if args.alpha_mm is not None else cl.alpha_mm,
        k1=args.k1 if args.k1 is not None else cl.k1,
        k2=args.k2 if args.k2 is not None else cl.k2,
        gamma_mm=args.gamma_mm if args.gamma_mm is not None else cl.gamma_mm,
    )
    beta = args.beta_mm if args.beta_mm is not None else params.beta_mm
    return replace(params, beta_mm=beta, cluster=cl)


def _seed_list(args) -> list[int]:
    if args.seed:
        return sorted(set(args.seed))
    return list(range(args.seeds))


def _stream_path(out: Path, seed: int) -> Path:
    return out / f"streams_{seed:04d}.csv"


def _truth_path(out: Path, seed: int) -> Path:
    return out / f"truth_{seed:04d}.csv"


def _meta_path(out: Path, seed: int) -> Path:
    return out / f"meta_{seed:04d}.json"


def _write_truth_csv(path: Path, truth, rate_hz: float) -> None:
    ts = sample_times(rate_hz, truth.duration_ms)
    xy = np.round(truth.sample(ts), 1)
    stop_idx = np.full(len(ts), -1, dtype=np.int64)
    for w in truth.stop_windows:
        inside = (ts >= w.t0_ms) & (ts <= w.t1_ms)
        stop_idx[inside] = w.stop_index
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t_ms", "x_mm", "y_mm", "stop_index"])
        for t, p, si in zip(ts, xy, stop_idx):
            writer.writerow([int(t), f"{p[0]:.1f}", f"{p[1]:.1f}", int(si)])


def cmd_simulate(args) -> int:
    scenario, params = resolve_scenario(args.scenario)
    params = _apply_overrides(params, args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seeds = _seed_list(args)
    save_config(scenario, params, out / "scenario.ini")
    truth = build_truth(scenario.plan)
    for seed in seeds:
        pair, uwb_trace, vo_trace = simulate_pair(scenario, seed)
        write_log(pair, _stream_path(out, seed))
        _write_truth_csv(_truth_path(out, seed), truth, scenario.vo.rate_hz)
        meta = {
            "schema_version": 1,
            "scenario": scenario.name,
            "seed": seed,
            "duration_ms": truth.duration_ms,
            "uwb_sigma_mm": scenario.uwb.sigma_mm,
            "vo_sigma_mm": scenario.vo.sigma_mm,
            "faulted_segments": [
                {"segment": f.segment_index, "scale": round(f.scale, 6)}
                for f in vo_trace.faults
            ],
            "rays": [
                {
                    "window": r.window_ordinal,
                    "stop_index": r.stop_index,
                    "t_onset_ms": r.t_onset_ms,
                    "direction_rad": round(r.direction_rad, 6),
                }
                for r in uwb_trace.rays
            ],
        }
        with open(_meta_path(out, seed), "w", encoding="utf-8") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)
            fh.write("\n")
        print(f"seed {seed:4d}: {len(pair.uwb)} uwb / {len(pair.vo)} vo samples, "
              f"{len(vo_trace.faults)} faulted segments, {len(uwb_trace.rays)} rays")
    print(f"wrote {len(seeds)} log sets to {out}")
    return 0


def _parse_methods(values: list[str]) -> list[BaselineKind]:
    if not values or "all" in values:
        return list(BaselineKind)
    out = []
    for v in values:
        try:
            out.append(BaselineKind(v))
        except ValueError:
            valid = ", ".join(k.value for k in BaselineKind)
            raise ConfigError(f"unknown method {v!r} (choose from: {valid}, all)")
    return out


def _run_cell(
    logs_dir: str, method_value: str, seed: int, params: PipelineParams
) -> tuple:
    """One (method, seed) evaluation; returns report or failure text."""
    out = Path(logs_dir)
    scenario, _ = load_config(out / "scenario.ini")
    kind = BaselineKind(method_value)
    pair = read_log(_stream_path(out, seed))
    truth = build_truth(scenario.plan)
    try:
        samples, track = run_method(kind, pair, scenario.plan, params)
    except StopDetectionFailure as exc:
        return (method_value, seed, None, str(exc), None, None, None)
    report = RunReport.build(kind.value, seed, track if track else samples, truth)
    track_rows = [
        [s.t_ms, f"{s.pos.x:.1f}", f"{s.pos.y:.1f}", m]
        for s, m in zip(
            samples, track.modes if track else ["vo"] * len(samples)
        )
    ]
    # plot data: the error-vs-time curve, decimated to a plottable size
    ts = np.fromiter((s.t_ms for s in samples), dtype=np.float64, count=len(samples))
    xy = np.array([[s.pos.x, s.pos.y] for s in samples])
    err = np.hypot(*(xy - truth.sample(ts)).T)
    stride = max(1, len(ts) // 2000)
    error_rows = [
        [int(t), f"{e:.1f}"] for t, e in zip(ts[::stride], err[::stride])
    ]
    stop_rows = None
    if track is not None:
        stop_rows = [
            [
                e.stop_index,
                e.t_ms,
                f"{e.planned.x:.1f}",
                f"{e.planned.y:.1f}",
                f"{e.estimate.pos.x:.1f}",
                f"{e.estimate.pos.y:.1f}",
                e.estimate.support,
                e.estimate.samples_consumed,
                int(e.estimate.complete),
                int(e.corrected),
                int(e.restart),
            ]
            for e in track.stop_events
        ]
    return (method_value, seed, report, None, track_rows, stop_rows, error_rows)


TRACK_HEADER = ("t_ms", "x_mm", "y_mm", "mode")
STOPS_HEADER = (
    "stop_index",
    "decision_t_ms",
    "planned_x_mm",
    "planned_y_mm",
    "est_x_mm",
    "est_y_mm",
    "support",
    "consumed",
    "complete",
    "corrected",
    "restart",
)


def cmd_run(args) -> int:
    logs_dir = Path(args.logs)
    scenario_path = logs_dir / "scenario.ini"
    if not scenario_path.exists():
        print(f"error: no scenario.ini in {logs_dir}", file=sys.stderr)
        return USAGE_ERROR
    scenario, params = load_config(scenario_path)
    spec = ExperimentSpec(
        scenario=scenario,
        params=_apply_overrides(params, args),
        methods=tuple(m.value for m in _parse_methods(args.method)),
        seeds=tuple(_seed_list(args)),
        out_dir=logs_dir,
    )
    params = spec.pipeline_params()
    missing = [s for s in spec.seeds if not _stream_path(logs_dir, s).exists()]
    if missing:
        print(f"error: no logs for seeds {missing} in {logs_dir}", file=sys.stderr)
        return USAGE_ERROR

    cells = [(m, s) for m in spec.methods for s in spec.seeds]
    results = []
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            futures = [
                pool.submit(_run_cell, str(logs_dir), m, s, params) for m, s in cells
            ]
            results = [f.result() for f in futures]
    else:
        results = [_run_cell(str(logs_dir), m, s, params) for m, s in cells]
    results.sort(key=lambda r: (r[0], r[1]))

    tracks_dir = logs_dir / "tracks"
    tracks_dir.mkdir(exist_ok=True)
    reports: list[RunReport] = []
    failures: list[tuple[str, int, str]] = []
    for method_value, seed, report, failure, track_rows, stop_rows, error_rows in results:
        if failure is not None:
            failures.append((method_value, seed, failure))
            continue
        reports.append(report)
        with open(
            tracks_dir / f"track_{method_value}_{seed:04d}.csv",
            "w",
            newline="",
            encoding="utf-8",
        ) as fh:
            writer = csv.writer(fh)
            writer.writerow(TRACK_HEADER)
            writer.writerows(track_rows)
        with open(
            tracks_dir / f"errors_{method_value}_{seed:04d}.csv",
            "w",
            newline="",
            encoding="utf-8",
        ) as fh:
            writer = csv.writer(fh)
            writer.writerow(("t_ms", "error_mm"))
            writer.writerows(error_rows)
        if stop_rows is not None:
            with open(
                tracks_dir / f"stops_{method_value}_{seed:04d}.csv",
                "w",
                newline="",
                encoding="utf-8",
            ) as fh:
                writer = csv.writer(fh)
                writer.writerow(STOPS_HEADER)
                writer.writerows(stop_rows)

    with open(logs_dir / "reports.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(REPORT_HEADER)
        for r in reports:
            writer.writerow(report_row(r))
    if failures:
        with open(logs_dir / "failures.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["method", "seed", "error"])
            writer.writerows(failures)
        for method_value, seed, text in failures:
            print(f"FAILED {method_value} seed {seed}: {text}", file=sys.stderr)
    print(f"wrote {len(reports)} reports to {logs_dir / 'reports.csv'}"
          + (f" ({len(failures)} failures)" if failures else ""))
    return EXPERIMENT_ERROR if failures else 0


def read_reports(path: Path) -> list[RunReport]:
    reports = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            reports.append(
                RunReport(
                    method=row["method"],
                    seed=int(row["seed"]),
                    per_stop_error=(),
                    avg_stop_mm=float(row["avg_stop_mm"]),
                    std_stop_mm=float(row["std_stop_mm"]),
                    rmse_mm=float(row["rmse_mm"]),
                    restarts=int(row["restarts"]),
                    corrections=int(row["corrections"]),
                )
            )
    return reports


def cmd_compare(args) -> int:
    logs_dir = Path(args.dir)
    reports_path = logs_dir / "reports.csv"
    if not reports_path.exists():
        print(f"error: no reports.csv in {logs_dir}", file=sys.stderr)
        return USAGE_ERROR
    reports = read_reports(reports_path)
    if not reports:
        print(f"error: {reports_path} holds no report rows", file=sys.stderr)
        return USAGE_ERROR
    summaries = compare(reports)
    table = render_table(summaries)
    print(table)
    with open(logs_dir / "compare.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(COMPARE_HEADER)
        writer.writerows(compare_rows(summaries))
    return 0


def raw_stop_accuracy(scenario: ScenarioConfig, sigma_mm: float, seeds: int) -> float:
    """Mean raw-UWB stop accuracy across seeds at a given noise level."""
    probe = replace(scenario, uwb=replace(scenario.uwb, sigma_mm=sigma_mm))
    truth = build_truth(probe.plan)
    values = []
    for seed in range(seeds):
        pair, _, _ = simulate_pair(probe, seed)
        values.append(stop_accuracy(list(pair.uwb), truth).avg_mm)
    return float(np.mean(values))


def cmd_calibrate(args) -> int:
    scenario, params = resolve_scenario(args.scenario)
    target = args.target_mm
    # a single noisy sample at the dwell midpoint has mean error
    # sigma * sqrt(pi/2); start there and refine by proportional scaling
    sigma = target / math.sqrt(math.pi / 2.0)
    measured = float("nan")
    for round_no in range(args.rounds):
        measured = raw_stop_accuracy(scenario, sigma, args.seeds)
        print(
            f"round {round_no + 1}: sigma_uwb {sigma:8.2f} mm -> "
            f"raw stop accuracy {measured:8.2f} mm (target {target})"
        )
        if abs(measured - target) <= args.tol_mm:
            break
        sigma *= target / measured
    scenario = replace(scenario, uwb=replace(scenario.uwb, sigma_mm=round(sigma, 2)))
    print(f"calibrated sigma_uwb = {scenario.uwb.sigma_mm} mm")
    if args.write_config:
        save_config(scenario, params, args.write_config)
        print(f"wrote {args.write_config}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="uwbvo", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="generate stream-pair + truth logs")
    p_sim.add_argument("--scenario", default="default",
                       help="preset name or config file path")
    p_sim.add_argument("--seeds", type=int, default=1, help="use seeds 0..N-1")
    p_sim.add_argument("--seed", type=int, action="append", default=[],
                       help="explicit seed (repeatable; overrides --seeds)")
    p_sim.add_argument("--out", required=True, help="output directory")
    _add_param_overrides(p_sim)
    p_sim.set_defaults(func=cmd_simulate)

    p_run = sub.add_parser("run", help="evaluate methods over existing logs")
    p_run.add_argument("--logs", required=True, help="directory from simulate")
    p_run.add_argument("--method", action="append", default=[],
                       help="method name or 'all' (repeatable)")
    p_run.add_argument("--seeds", type=int, default=1)
    p_run.add_argument("--seed", type=int, action="append", default=[])
    p_run.add_argument("--jobs", type=int, default=1,
                       help="concurrent (method, seed) cells")
    _add_param_overrides(p_run)
    p_run.set_defaults(func=cmd_run)

    p_cmp = sub.add_parser("compare", help="tabulate reports in a directory")
    p_cmp.add_argument("dir", help="directory holding reports.csv")
    p_cmp.set_defaults(func=cmd_compare)

    p_cal = sub.add_parser(
        "calibrate", help="pick sigma_uwb to hit a raw stop-accuracy target"
    )
    p_cal.add_argument("--scenario", default="default")
    p_cal.add_argument("--target-mm", type=float, default=131.9)
    p_cal.add_argument("--tol-mm", type=float, default=3.0)
    p_cal.add_argument("--seeds", type=int, default=5)
    p_cal.add_argument("--rounds", type=int, default=3)
    p_cal.add_argument("--write-config", help="write the calibrated scenario here")
    p_cal.set_defaults(func=cmd_calibrate)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXPERIMENT_ERROR


if __name__ == "__main__":
    sys.exit(main())
