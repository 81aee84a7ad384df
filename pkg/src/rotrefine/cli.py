"""Command line entry point.

Exit codes: 0 success, 1 usage / invalid parameter, 2 data or domain error
(the error class name is printed on stderr). Stdout carries CSV only.
"""
from __future__ import annotations

import argparse
import csv
import io
import math
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from . import graph as fg
from . import harness
from .errors import RotRefineError
from .projection import (
    NOISE_MODELS,
    SimulatedRun,
    fmt,
    load_observations,
    make_scene,
    simulate_trajectory,
)
from .ransac import DEFAULT_K_THRESHOLD, NOISY_K_THRESHOLD, RansacConfig, estimate_angles
from .tracks import (
    DEFAULT_Y_SHIFT_PX,
    build_triplet_tracks,
    load_keypoints,
    load_tracks,
    simulated_tracks,
    synthetic_keypoints,
    write_keypoints,
    write_tracks,
)
from .triplet import solve_triplet


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def _floats(text: str) -> list[float]:
    return [float(v) for v in str(text).split(",") if v.strip()]


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _nonneg(text: str) -> float:
    v = float(text)
    if not v >= 0:
        raise argparse.ArgumentTypeError(f"expected a value >= 0, got {text}")
    return v


def _sim_flags(p, enc_list=False):
    p.add_argument("--frames", type=_positive_int, default=360)
    p.add_argument("--step-deg", type=float, default=1.0)
    if enc_list:
        p.add_argument("--sigma-enc-deg", default="0.05", help="comma-separated list")
    else:
        p.add_argument("--sigma-enc-deg", type=_nonneg, default=0.05)
    p.add_argument("--pixel-sigma", type=_nonneg, default=0.0)
    p.add_argument("--points", type=_positive_int, default=40)
    p.add_argument("--amplitude-max", type=float, default=1000.0)
    p.add_argument("--noise-model", choices=NOISE_MODELS, default="random_walk")


def _ransac_flags(p, k_threshold=DEFAULT_K_THRESHOLD):
    p.add_argument("--p", type=float, default=0.99, help="desired success probability")
    p.add_argument("--q", type=float, default=0.5, help="probability of a reliable track")
    p.add_argument("--k-threshold", type=float, default=k_threshold)
    p.add_argument("--max-iterations", type=_positive_int, default=10_000)
    p.add_argument("--ransac-seed", type=int, default=0)
    p.add_argument("--refit", action="store_true", help="average over inlier pairs")
    p.add_argument("--literal-iterations", action="store_true")


def _track_flags(p):
    p.add_argument("--descriptor-noise", type=_nonneg, default=0.0)
    p.add_argument("--y-shift-px", type=float, default=DEFAULT_Y_SHIFT_PX)
    p.add_argument("--max-tracks", type=_positive_int, default=None)


def _ransac_config(args) -> RansacConfig:
    return RansacConfig(
        p=args.p, q=args.q, k_threshold=args.k_threshold,
        max_iterations_cap=args.max_iterations, seed=args.ransac_seed,
        literal_iterations=args.literal_iterations, refit=args.refit,
    )


def _sim_params(args, sigma_enc_deg=None) -> harness.SimParams:
    if sigma_enc_deg is None:
        sigma_enc_deg = args.sigma_enc_deg
    return harness.SimParams(
        frame_count=args.frames, step_deg=args.step_deg, sigma_enc_deg=sigma_enc_deg,
        pixel_sigma=args.pixel_sigma, noise_model=args.noise_model,
        point_count=args.points, amplitude_max=args.amplitude_max,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rotrefine", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"rotrefine {__version__}")
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", default=None, help="output path (default: stdout)")
    common.add_argument("--config", default=None, help="key = value config file")
    common.add_argument("--print-config", action="store_true")
    common.add_argument("--threads", type=_positive_int, default=os.cpu_count() or 1)
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("simulate", parents=[common], help="simulate a scan")
    _sim_flags(p)
    p.add_argument("--keypoints", action="store_true", help="also write keypoints.csv")
    p.add_argument("--descriptor-noise", type=_nonneg, default=0.0)
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("tracks", parents=[common], help="build triplet tracks")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--obs", help="obs.csv from simulate (synthetic descriptors)")
    src.add_argument("--keypoints", help="keypoint CSV")
    p.add_argument("--frames", type=int, nargs=3, metavar=("F1", "F2", "F3"))
    p.add_argument("--step", type=_positive_int, help="emit every window (j, j+s, j+2s)")
    p.add_argument("--out-dir", help="directory for per-window track files")
    _track_flags(p)
    p.set_defaults(handler=cmd_tracks)

    p = sub.add_parser("estimate", parents=[common], help="RANSAC angle estimate")
    p.add_argument("tracks", nargs="?", help="track CSV of one triplet")
    p.add_argument("--tracks-dir", help="directory written by 'tracks --step'")
    p.add_argument("--no-header", action="store_true")
    _ransac_flags(p)
    p.set_defaults(handler=cmd_estimate)

    p = sub.add_parser("solve-triplet", parents=[common], help="closed form on two tracks")
    p.add_argument("tracks", help="track CSV with exactly two rows")
    p.set_defaults(handler=cmd_solve_triplet)

    p = sub.add_parser("refine", parents=[common], help="solve a rotation graph")
    p.add_argument("graph", nargs="?", help="graph text file")
    p.add_argument("--angles", help="angles.csv providing commanded increments")
    p.add_argument("--cv", help="per-window CSV written by 'estimate --tracks-dir'")
    p.add_argument("--cv-step", type=_positive_int, default=10)
    p.add_argument("--sigma-enc-deg", type=_nonneg, default=0.05)
    p.add_argument("--sigma-cv-deg", type=_nonneg, default=0.05)
    p.add_argument("--tiling", choices=("dense", "disjoint"), default="dense")
    p.add_argument("--emit-graph", help="also write the assembled graph text here")
    p.set_defaults(handler=cmd_refine)

    p = sub.add_parser("mc", parents=[common], help="Monte Carlo error ratio")
    _sim_flags(p, enc_list=True)
    p.add_argument("--sigma-cv-deg", type=str, default="0.05", help="comma-separated list")
    p.add_argument("--cv-step", type=_positive_int, default=10)
    p.add_argument("--trials", type=_positive_int, default=500)
    p.add_argument("--mode", choices=("oracle", "end_to_end"), default="oracle")
    p.add_argument("--tiling", choices=("dense", "disjoint"), default="dense")
    _track_flags(p)
    _ransac_flags(p, NOISY_K_THRESHOLD)
    p.add_argument("--plot-script")
    p.set_defaults(handler=cmd_mc)

    p = sub.add_parser("sweep", parents=[common], help="CV estimator step-size sweep")
    _sim_flags(p)
    p.add_argument("--steps-deg", default="1,2,3,4,5,7,10,20,30,40")
    p.add_argument("--angles", help="use a saved run (needs --obs)")
    p.add_argument("--obs")
    p.add_argument("--min-samples", type=_positive_int, default=30)
    _track_flags(p)
    _ransac_flags(p, NOISY_K_THRESHOLD)
    p.add_argument("--plot-script")
    p.set_defaults(handler=cmd_sweep)

    p = sub.add_parser("hist", parents=[common], help="histogram of CV estimator errors")
    p.add_argument("--values", help="CSV whose first column holds values in degrees")
    p.add_argument("--count", type=_positive_int, default=5000)
    p.add_argument("--step-deg", type=float, default=10.0)
    p.add_argument("--pixel-sigma", type=_nonneg, default=0.3)
    p.add_argument("--points", type=_positive_int, default=40)
    p.add_argument("--bin-width-deg", type=float, default=0.05)
    _ransac_flags(p, NOISY_K_THRESHOLD)
    p.add_argument("--plot-script")
    p.set_defaults(handler=cmd_hist)

    p = sub.add_parser("bench", parents=[common], help="time the 1D graph solve")
    p.add_argument("--nodes", type=str, default="360", help="comma-separated node counts")
    p.add_argument("--repeats", type=_positive_int, default=20)
    p.add_argument("--cv-step", type=_positive_int, default=10)
    p.set_defaults(handler=cmd_bench)
    return parser


# --- config handling --------------------------------------------------------

def read_config(path) -> dict[str, str]:
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key.replace("-", "_")] = value
    return values


def _apply_config(subparser: argparse.ArgumentParser, values: dict[str, str]) -> None:
    actions = {a.dest: a for a in subparser._actions}
    defaults = {}
    for key, raw in values.items():
        action = actions.get(key)
        if action is None or key in ("help", "config", "handler"):
            raise UsageError(f"unknown config key {key!r}")
        if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
            defaults[key] = raw.lower() in ("1", "true", "yes", "on")
        elif action.nargs not in (None, "?"):
            defaults[key] = [action.type(v) if action.type else v for v in raw.split()]
        else:
            try:
                defaults[key] = action.type(raw) if action.type else raw
            except (ValueError, argparse.ArgumentTypeError) as exc:
                raise UsageError(f"config key {key}: {exc}") from None
    subparser.set_defaults(**defaults)


def parse_args(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        subparsers = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
        sp = subparsers.choices[args.command]
        _apply_config(sp, read_config(args.config))
        args = parser.parse_args(argv)
    return args


def print_config(args, stream) -> None:
    for key, value in sorted(vars(args).items()):
        if key in ("handler", "print_config"):
            continue
        if isinstance(value, list):
            value = " ".join(map(str, value))
        stream.write(f"{key} = {value}\n")


# --- output helpers ------------------------------------------------------

class _Output:
    def __init__(self, path):
        self.path = path

    def __enter__(self):
        if self.path:
            self.fh = open(self.path, "w", newline="")
        else:
            self.fh = io.StringIO()
        return self.fh

    def __exit__(self, *exc):
        if not self.path:
            sys.stdout.write(self.fh.getvalue())
        self.fh.close()
        return False


def _write_rows(path, header, rows):
    with _Output(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _num(v):
    if isinstance(v, bool):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return fmt(v)
    return v


# --- subcommands -----------------------------------------------------------

def cmd_simulate(args):
    sim = _sim_params(args)
    spec = sim.trajectory(args.seed)
    run = simulate_trajectory(spec, make_scene(sim.point_count, sim.amplitude_max, args.seed))
    out = Path(args.out or ".")
    run.save(out)
    if args.keypoints:
        frames = [synthetic_keypoints(run, f, args.descriptor_noise, args.seed)
                  for f in range(run.frame_count)]
        write_keypoints(out / "keypoints.csv", frames)


def _keypoint_source(args):
    if args.obs:
        run = load_observations(args.obs)
        return run.frame_count, lambda f: synthetic_keypoints(run, f, args.descriptor_noise, args.seed), run
    kps = load_keypoints(args.keypoints)
    frame_count = max(kps) + 1 if kps else 0
    return frame_count, lambda f: kps[f], None


def cmd_tracks(args):
    if (args.frames is None) == (args.step is None):
        raise UsageError("tracks: give exactly one of --frames or --step")
    frame_count, keypoints, run = _keypoint_source(args)

    def window(frames):
        if run is not None:
            return simulated_tracks(run, tuple(frames), args.descriptor_noise, args.seed,
                                    args.y_shift_px, args.max_tracks)
        for f in frames:
            if not 0 <= f < frame_count:
                raise UsageError(f"frame {f} not present in keypoint file")
        tracks = build_triplet_tracks(*(keypoints(f) for f in frames), args.y_shift_px)
        return tracks[: args.max_tracks] if args.max_tracks else tracks

    if args.frames is not None:
        with _Output(args.out) as fh:
            write_tracks(fh, window(args.frames))
        return
    if not args.out_dir:
        raise UsageError("tracks --step requires --out-dir")
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    s = args.step
    for j in range(frame_count - 2 * s):
        write_tracks(out / f"window_{j:05d}_{s}.csv", window((j, j + s, j + 2 * s)))


WINDOW_HEADER = ["window_start", "step", "delta1_rad", "delta2_rad", "k", "inliers", "iterations", "status"]


def cmd_estimate(args):
    config = _ransac_config(args)
    if args.tracks_dir:
        rows = []
        files = sorted(Path(args.tracks_dir).glob("window_*_*.csv"))
        for path in files:
            _, start, step = path.stem.split("_")
            start, step = int(start), int(step)
            tracks = load_tracks(path)
            try:
                res = estimate_angles(tracks, replace(config, seed=harness.window_seed(config.seed, start)))
            except RotRefineError as exc:
                rows.append([start, step, "", "", "", 0, 0, exc.name])
                continue
            a = res.angles
            rows.append([start, step, fmt(a.delta1), fmt(a.delta2), fmt(a.k),
                         res.inlier_count, res.iterations_run, "ok"])
        _write_rows(args.out, WINDOW_HEADER, rows)
        return
    if not args.tracks:
        raise UsageError("estimate: give a track CSV or --tracks-dir")
    res = estimate_angles(load_tracks(args.tracks), config)
    row = [fmt(math.degrees(res.angles.delta1)), fmt(math.degrees(res.angles.delta2)),
           fmt(res.angles.k), res.inlier_count, res.iterations_run]
    with _Output(args.out) as fh:
        w = csv.writer(fh, lineterminator="\n")
        if not args.no_header:
            w.writerow(["delta1_deg", "delta2_deg", "k", "inliers", "iterations"])
        w.writerow(row)


def cmd_solve_triplet(args):
    tracks = load_tracks(args.tracks)
    if len(tracks) != 2:
        raise UsageError(f"solve-triplet needs exactly 2 tracks, got {len(tracks)}")
    a = solve_triplet(*tracks)
    _write_rows(args.out, ["delta1_deg", "delta2_deg", "k"],
                [[fmt(math.degrees(a.delta1)), fmt(math.degrees(a.delta2)), fmt(a.k)]])


def load_window_csv(path) -> dict[int, tuple[float, float]]:
    from .errors import DataFormatError

    windows = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != WINDOW_HEADER:
            raise DataFormatError(f"bad window header {header}", line=1)
        for lineno, row in enumerate(reader, start=2):
            if row[7] != "ok":
                continue
            try:
                windows[int(row[0])] = (float(row[2]), float(row[3]))
            except (ValueError, IndexError) as exc:
                raise DataFormatError(str(exc), line=lineno) from None
    return windows


def cmd_refine(args):
    if args.graph:
        g = fg.loads(Path(args.graph).read_text())
    elif args.angles:
        run = SimulatedRun.load(args.angles)
        spans = {}
        if args.cv:
            windows = load_window_csv(args.cv)
            spans = harness.spans_from_windows(windows, args.cv_step, run.frame_count)
        g = harness.build_graph(run.commanded_increments, spans, args.cv_step,
                                math.radians(args.sigma_enc_deg), math.radians(args.sigma_cv_deg),
                                tiling=args.tiling)
    else:
        raise UsageError("refine: give a graph file or --angles")
    if args.emit_graph:
        Path(args.emit_graph).write_text(fg.dumps(g))
    result = fg.solve(g)
    _write_rows(args.out, ["frame", "theta_rad"], [[n, fmt(t)] for n, t in enumerate(result.angles)])


REPORT_FIELDS = ["sigma_enc", "sigma_cv", "cv_step", "trials", "rmse_pure", "rmse_graph",
                 "error_ratio", "mean_rmse_pure", "mean_rmse_graph", "mean_error_ratio",
                 "failed_trials", "ratio_defined"]


def cmd_mc(args):
    sigma_encs = _floats(args.sigma_enc_deg)
    if any(v < 0 for v in sigma_encs):
        raise UsageError("--sigma-enc-deg values must be >= 0")
    sim = _sim_params(args, sigma_enc_deg=sigma_encs[0])
    params = harness.GraphParams(
        cv_step=args.cv_step, mode=args.mode, tiling=args.tiling, ransac=_ransac_config(args),
        descriptor_noise=args.descriptor_noise, y_shift_threshold=args.y_shift_px,
        max_tracks=args.max_tracks,
    )
    reports = harness.error_ratio_surface(sim, params, sigma_encs,
                                          _floats(args.sigma_cv_deg), args.trials, args.seed,
                                          args.threads)
    rows = [[_num(getattr(r, f)) for f in REPORT_FIELDS] for r in reports]
    _write_rows(args.out, REPORT_FIELDS, rows)
    if args.plot_script:
        write_plot_script(args.plot_script, "mc", args.out)


def cmd_sweep(args):
    if args.angles:
        if not args.obs:
            raise UsageError("sweep --angles needs --obs")
        run = SimulatedRun.load(args.angles, args.obs)
    else:
        sim = _sim_params(args)
        run = simulate_trajectory(sim.trajectory(args.seed),
                                  make_scene(sim.point_count, sim.amplitude_max, args.seed))
    config = harness.SweepConfig(
        ransac=_ransac_config(args), descriptor_noise=args.descriptor_noise,
        y_shift_threshold=args.y_shift_px, max_tracks=args.max_tracks,
        min_samples=args.min_samples, seed=args.seed,
    )
    rows = harness.sweep_step_size(_floats(args.steps_deg), run, config)
    _write_rows(args.out, ["step_deg", "sample_count", "median_err", "q1_err", "q3_err",
                           "failures", "flagged"],
                [[_num(r.step_deg), r.sample_count, _num(r.median_err), _num(r.q1_err),
                  _num(r.q3_err), r.failures, int(r.flagged)] for r in rows])
    if args.plot_script:
        write_plot_script(args.plot_script, "sweep", args.out)


def cmd_hist(args):
    series = {}
    if args.values:
        with open(args.values, newline="") as fh:
            reader = csv.reader(fh)
            first = next(reader, None)
            vals = []
            try:
                vals.append(float(first[0]))
            except (TypeError, ValueError, IndexError):
                pass
            vals += [float(r[0]) for r in reader if r]
        series["values"] = vals
    else:
        d1, d2, _ = harness.estimator_errors(
            args.count, args.step_deg, args.pixel_sigma, args.points,
            config=_ransac_config(args), seed=args.seed,
        )
        series = {"delta1": d1, "delta2": d2}
    rows = []
    for name, vals in series.items():
        h = harness.histogram(vals, args.bin_width_deg)
        rows += [[name, fmt(e), int(c)] for e, c in zip(h.edges, h.counts)]
    _write_rows(args.out, ["series", "bin_left_deg", "count"], rows)
    if args.plot_script:
        write_plot_script(args.plot_script, "hist", args.out)


def cmd_bench(args):
    rows = []
    for n in _floats(args.nodes):
        n = int(n)
        if n < 2:
            raise UsageError("bench needs at least 2 nodes")
        rows.append([n, fmt(harness.bench_solve(n, args.repeats, args.cv_step))])
    _write_rows(args.out, ["node_count", "median_seconds"], rows)


_PLOTS = {
    "mc": """set datafile separator ','
set key autotitle columnhead
set xlabel 'sigma CV, deg'
set ylabel 'error ratio'
set logscale x
plot '{csv}' using 2:7 with linespoints title 'RMSE pure / RMSE graph'
""",
    "sweep": """set datafile separator ','
set key autotitle columnhead
set xlabel 'step, deg'
set ylabel 'signed error, deg'
plot '{csv}' using 1:3:4:5 with yerrorbars title 'median, Q1-Q3'
""",
    "hist": """set datafile separator ','
set key autotitle columnhead
set style fill solid 0.5
set xlabel 'error, deg'
set ylabel 'count'
plot '{csv}' using (strcol(1) eq 'delta1' ? $2 : NaN):3 with boxes title 'delta1', \\
     '{csv}' using (strcol(1) eq 'delta2' ? $2 : NaN):3 with boxes title 'delta2'
""",
}


def write_plot_script(path, kind: str, csv_path) -> None:
    Path(path).write_text(_PLOTS[kind].format(csv=csv_path or "data.csv"))


def run(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(argv)
        if args.print_config:
            print_config(args, sys.stdout)
            return 0
        args.handler(args)
        return 0
    except UsageError as exc:
        sys.stderr.write(f"{exc}\n")
        return 1
    except RotRefineError as exc:
        sys.stderr.write(f"{exc.name}: {exc}\n")
        return 2
    except (FileNotFoundError, IsADirectoryError) as exc:
        sys.stderr.write(f"{type(exc).__name__}: {exc}\n")
        return 2
    except ValueError as exc:
        sys.stderr.write(f"invalid parameter: {exc}\n")
        return 1


def main():
    sys.exit(run())
