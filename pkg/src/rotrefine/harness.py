"""Experiment drivers: Monte Carlo error ratio, step-size sweep, histograms,
threshold calibration and solver benchmarks.

Angles are radians inside the pipeline; every report produced here is in
degrees.
"""
from __future__ import annotations

import math
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import graph as fg
from .errors import RotRefineError
from .projection import (
    SimulatedRun,
    TrajectorySpec,
    make_scene,
    simulate_trajectory,
    simulate_true_angles,
)
from .ransac import NOISY_K_THRESHOLD, RansacConfig, estimate_angles
from .tracks import DEFAULT_Y_SHIFT_PX, TripletTrack, simulated_tracks

_STREAM_CV = 11
_STREAM_WINDOW = 12
_STREAM_PLANTED = 13

SIGMA_FLOOR = 1e-9  # rad; graph weight used when a configured sigma is zero


def derive_seed(*entropy: int) -> int:
    return int(np.random.SeedSequence(list(entropy)).generate_state(1, np.uint64)[0])


def rmse(estimated, reference) -> float:
    est = np.asarray(estimated, dtype=float)
    ref = np.asarray(reference, dtype=float)
    if est.shape != ref.shape:
        raise ValueError(f"length mismatch: {est.shape} vs {ref.shape}")
    if est.size == 0:
        raise ValueError("rmse of an empty sequence")
    return float(np.sqrt(np.mean((est - ref) ** 2)))


@dataclass(frozen=True)
class SimParams:
    frame_count: int = 360
    step_deg: float = 1.0
    sigma_enc_deg: float = 0.05
    pixel_sigma: float = 0.0
    noise_model: str = "random_walk"
    point_count: int = 40
    amplitude_max: float = 1000.0

    def trajectory(self, seed: int) -> TrajectorySpec:
        return TrajectorySpec(
            frame_count=self.frame_count,
            commanded_step=math.radians(self.step_deg),
            step_sigma=math.radians(self.sigma_enc_deg),
            pixel_sigma=self.pixel_sigma,
            seed=seed,
            noise_model=self.noise_model,
        )


@dataclass(frozen=True)
class GraphParams:
    """Factor-graph and CV-estimator settings for one experiment.

    ``sigma_enc_deg=None`` weights Enc factors with the simulated noise.
    ``mode`` is ``"oracle"`` (CV = true span + Gaussian noise) or
    ``"end_to_end"`` (CV from matching + RANSAC on simulated keypoints).
    """

    cv_step: int = 10
    sigma_cv_deg: float = 0.05
    sigma_enc_deg: float | None = None
    prior_sigma: float = fg.PRIOR_SIGMA
    tiling: str = "dense"
    mode: str = "oracle"
    ransac: RansacConfig = field(default_factory=lambda: RansacConfig(k_threshold=NOISY_K_THRESHOLD))
    descriptor_noise: float = 0.0
    y_shift_threshold: float = DEFAULT_Y_SHIFT_PX
    max_tracks: int | None = None


@dataclass
class ErrorRatioReport:
    sigma_enc: float
    sigma_cv: float
    cv_step: int
    trials: int
    rmse_pure: float
    rmse_graph: float
    error_ratio: float
    mean_rmse_pure: float = math.nan
    mean_rmse_graph: float = math.nan
    mean_error_ratio: float = math.nan
    failed_trials: int = 0
    ratio_defined: bool = True

    def as_row(self) -> dict:
        return asdict(self)


# --- graph assembly shared by the harness and the CLI ---------------------

def build_graph(commanded_increments, cv_spans: dict, cv_step: int, sigma_enc: float,
                sigma_cv: float, prior_sigma: float = fg.PRIOR_SIGMA,
                tiling: str = "dense") -> fg.RotationGraph:
    """Enc chain over commanded increments plus CV factors, node 0 at 0."""
    inc = np.asarray(commanded_increments, dtype=float)
    g = fg.dead_reckoning_graph(inc, max(sigma_enc, SIGMA_FLOOR), 0.0, prior_sigma)
    spans = {j: u for j, u in cv_spans.items() if j + cv_step < g.node_count}
    fg.attach_cv_factors(g, g.node_count, spans, cv_step, max(sigma_cv, SIGMA_FLOOR), tiling)
    return g


def window_seed(base: int, start: int) -> int:
    return derive_seed(base, _STREAM_WINDOW, start)


def estimate_window(tracks: list[TripletTrack], config: RansacConfig, start: int):
    """RANSAC on one window; returns the RansacResult or None on failure."""
    try:
        return estimate_angles(tracks, replace(config, seed=window_seed(config.seed, start)))
    except RotRefineError:
        return None


def spans_from_windows(windows: dict, step: int, frame_count: int) -> dict[int, float]:
    """Map span start -> angle from per-window (delta1, delta2) estimates.

    Span ``j`` takes delta1 of window ``j`` or, failing that, delta2 of
    window ``j - step``.
    """
    spans = {}
    for j in range(frame_count - step):
        w = windows.get(j)
        if w is not None:
            spans[j] = w[0]
            continue
        prev = windows.get(j - step)
        if prev is not None:
            spans[j] = prev[1]
    return spans


def estimate_windows(run: SimulatedRun, params: GraphParams, seed: int = 0) -> dict:
    """CV estimates ``start -> (delta1, delta2)`` for all windows of a run."""
    s = params.cv_step
    out = {}
    for j in range(run.frame_count - 2 * s):
        tracks = simulated_tracks(
            run, (j, j + s, j + 2 * s), params.descriptor_noise, seed,
            params.y_shift_threshold, params.max_tracks,
        )
        res = estimate_window(tracks, params.ransac, j)
        if res is not None:
            out[j] = (res.angles.delta1, res.angles.delta2)
    return out


def end_to_end_trajectory(run: SimulatedRun, params: GraphParams, sigma_enc: float,
                          seed: int = 0) -> np.ndarray:
    windows = estimate_windows(run, params, seed)
    spans = spans_from_windows(windows, params.cv_step, run.frame_count)
    g = build_graph(run.commanded_increments, spans, params.cv_step, sigma_enc,
                    math.radians(params.sigma_cv_deg), params.prior_sigma, params.tiling)
    return fg.solve(g).angles


# --- Monte Carlo -----------------------------------------------------------

def run_trial(sim: SimParams, params: GraphParams, seed: int) -> tuple[float, float]:
    """RMSE (radians) of dead reckoning and of the refined trajectory."""
    spec = sim.trajectory(seed)
    sigma_enc = math.radians(
        sim.sigma_enc_deg if params.sigma_enc_deg is None else params.sigma_enc_deg
    )
    sigma_cv = math.radians(params.sigma_cv_deg)
    if params.mode == "oracle":
        truth = simulate_true_angles(spec)
        commanded = np.full(spec.frame_count - 1, spec.commanded_step)
        s = params.cv_step
        rng = np.random.default_rng(np.random.SeedSequence([seed, _STREAM_CV]))
        spans = truth[s:] - truth[:-s] + rng.standard_normal(len(truth) - s) * sigma_cv
        g = build_graph(commanded, dict(enumerate(spans)), s, sigma_enc, sigma_cv,
                        params.prior_sigma, params.tiling)
        refined = fg.solve(g).angles
    elif params.mode == "end_to_end":
        scene = make_scene(sim.point_count, sim.amplitude_max, seed)
        run = simulate_trajectory(spec, scene)
        truth, commanded = run.true_angles, run.commanded_increments
        refined = end_to_end_trajectory(run, params, sigma_enc, seed)
    else:
        raise ValueError(f"unknown mode {params.mode!r}")
    pure = np.concatenate([[0.0], np.cumsum(commanded)])
    return rmse(pure, truth), rmse(refined, truth)


def run_monte_carlo(sim: SimParams, params: GraphParams, trials: int = 500,
                    master_seed: int = 0, threads: int | None = None) -> ErrorRatioReport:
    """Error ratio of dead reckoning vs graph refinement over many trials.

    Trial ``t`` is seeded from ``(master_seed, t)`` and results are reduced in
    trial order, so the report does not depend on ``threads``. Per-trial
    RMSEs are combined as a root mean square before taking the ratio; plain
    means are reported alongside.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")

    def one(t):
        try:
            return run_trial(sim, params, derive_seed(master_seed, t))
        except RotRefineError:
            return None

    if threads == 1:
        results = [one(t) for t in range(trials)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, range(trials)))
    ok = np.array([r for r in results if r is not None], dtype=float).reshape(-1, 2)
    failed = trials - len(ok)
    deg = np.degrees(ok)
    pure_rms = float(np.sqrt(np.mean(deg[:, 0] ** 2))) if len(ok) else math.nan
    graph_rms = float(np.sqrt(np.mean(deg[:, 1] ** 2))) if len(ok) else math.nan
    pure_mean = float(np.mean(deg[:, 0])) if len(ok) else math.nan
    graph_mean = float(np.mean(deg[:, 1])) if len(ok) else math.nan
    defined = len(ok) > 0 and pure_rms > 0 and graph_rms > 0
    return ErrorRatioReport(
        sigma_enc=sim.sigma_enc_deg,
        sigma_cv=params.sigma_cv_deg,
        cv_step=params.cv_step,
        trials=trials,
        rmse_pure=pure_rms,
        rmse_graph=graph_rms,
        error_ratio=pure_rms / graph_rms if defined else math.nan,
        mean_rmse_pure=pure_mean,
        mean_rmse_graph=graph_mean,
        mean_error_ratio=pure_mean / graph_mean if defined else math.nan,
        failed_trials=failed,
        ratio_defined=defined,
    )


def error_ratio_surface(sim: SimParams, params: GraphParams, sigma_enc_degs, sigma_cv_degs,
                        trials: int = 500, master_seed: int = 0, threads=None):
    """Reports over a grid of (sigma_enc, sigma_cv), row-major in sigma_enc."""
    return [
        run_monte_carlo(replace(sim, sigma_enc_deg=se), replace(params, sigma_cv_deg=sc),
                        trials, master_seed, threads)
        for se in sigma_enc_degs
        for sc in sigma_cv_degs
    ]


def equal_accuracy_multiplier(sim: SimParams, params: GraphParams, multipliers,
                              trials: int = 500, master_seed: int = 0, threads=None):
    """Largest Enc-noise multiplier whose graph RMSE still matches baseline.

    The baseline is the dead-reckoning RMSE at ``sim.sigma_enc_deg``. Returns
    ``(multiplier or None, baseline_rmse, [(m, graph_rmse), ...])``.
    """
    base = run_monte_carlo(sim, params, trials, master_seed, threads).rmse_pure
    curve = []
    best = None
    for m in sorted(multipliers):
        rep = run_monte_carlo(replace(sim, sigma_enc_deg=sim.sigma_enc_deg * m), params,
                              trials, master_seed, threads)
        curve.append((m, rep.rmse_graph))
        if rep.rmse_graph <= base:
            best = m
    return best, base, curve


# --- step-size sweep -------------------------------------------------------

@dataclass
class SweepRow:
    step_deg: float
    sample_count: int
    median_err: float
    q1_err: float
    q3_err: float
    failures: int = 0
    flagged: bool = False

    @property
    def iqr(self) -> float:
        return self.q3_err - self.q1_err


@dataclass(frozen=True)
class SweepConfig:
    ransac: RansacConfig = field(default_factory=lambda: RansacConfig(k_threshold=NOISY_K_THRESHOLD))
    descriptor_noise: float = 0.0
    y_shift_threshold: float = DEFAULT_Y_SHIFT_PX
    max_tracks: int | None = None
    min_samples: int = 30
    seed: int = 0


def window_errors(run: SimulatedRun, step_frames: int, config: SweepConfig):
    """Signed (delta1, delta2) errors in degrees for every window, plus failures."""
    s = step_frames
    errors, failures = [], 0
    truth = run.true_angles
    for j in range(run.frame_count - 2 * s):
        tracks = simulated_tracks(
            run, (j, j + s, j + 2 * s), config.descriptor_noise, config.seed,
            config.y_shift_threshold, config.max_tracks,
        )
        res = estimate_window(tracks, config.ransac, j)
        if res is None:
            failures += 1
            continue
        errors.append(res.angles.delta1 - (truth[j + s] - truth[j]))
        errors.append(res.angles.delta2 - (truth[j + 2 * s] - truth[j + s]))
    return np.degrees(errors), failures


def sweep_step_size(steps_deg, run: SimulatedRun, config: SweepConfig | None = None) -> list[SweepRow]:
    """Median and quartiles of signed estimation errors for each step size."""
    config = config or SweepConfig()
    step_rad = float(np.median(run.commanded_increments))
    rows = []
    for step in steps_deg:
        s = int(round(math.radians(step) / step_rad))
        if s < 1 or run.frame_count - 2 * s <= 0:
            rows.append(SweepRow(step, 0, math.nan, math.nan, math.nan, 0, True))
            continue
        errs, failures = window_errors(run, s, config)
        n = len(errs) // 2
        if n == 0:
            rows.append(SweepRow(step, 0, math.nan, math.nan, math.nan, failures, True))
            continue
        q1, med, q3 = np.percentile(errs, [25, 50, 75])
        rows.append(SweepRow(step, n, float(med), float(q1), float(q3), failures,
                             n < config.min_samples))
    return rows


# --- histograms ------------------------------------------------------------

@dataclass
class Histogram:
    edges: np.ndarray  # left edges
    counts: np.ndarray
    bin_width: float


def histogram(values, bin_width: float) -> Histogram:
    """Fixed-width bins anchored at the minimum value."""
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("histogram of an empty sample")
    if not bin_width > 0:
        raise ValueError("bin_width must be > 0")
    lo = v.min()
    idx = np.floor((v - lo) / bin_width).astype(int)
    counts = np.bincount(idx)
    return Histogram(lo + bin_width * np.arange(len(counts)), counts, bin_width)


def estimator_errors(count: int, step_deg: float = 10.0, pixel_sigma: float = 0.3,
                     point_count: int = 40, amplitude_max: float = 1000.0,
                     config: RansacConfig | None = None, seed: int = 0):
    """Signed (delta1, delta2) errors in degrees of the CV estimator.

    Each sample is an independent triplet of a fresh random scene at true
    steps ``step_deg`` with pixel noise; failed windows are skipped and
    counted.
    """
    config = config or RansacConfig(k_threshold=NOISY_K_THRESHOLD)
    step = math.radians(step_deg)
    d1, d2, failures = [], [], 0
    t = 0
    while len(d1) < count:
        s = derive_seed(seed, t)
        t += 1
        scene = make_scene(point_count, amplitude_max, s)
        spec = TrajectorySpec(frame_count=3, commanded_step=step, step_sigma=0.0,
                              pixel_sigma=pixel_sigma, seed=s)
        run = simulate_trajectory(spec, scene)
        res = estimate_window(simulated_tracks(run, (0, 1, 2), seed=s), config, 0)
        if res is None:
            failures += 1
            continue
        d1.append(math.degrees(res.angles.delta1 - step))
        d2.append(math.degrees(res.angles.delta2 - step))
    return np.array(d1), np.array(d2), failures


# --- RANSAC threshold calibration -----------------------------------------

def planted_tracks(count: int = 20, outlier_fraction: float = 0.3, delta1: float = math.radians(10),
                   delta2: float = math.radians(10), pixel_sigma: float = 0.0,
                   amplitude_max: float = 1000.0, seed: int = 0):
    """Tracks of one triplet with a planted share of contaminant tracks.

    Contaminants follow a different random angle pair (both in [1, 40] deg,
    sum < 90 deg). Returns ``(tracks, contaminant_ids)``; ids are shuffled so
    contaminants are not grouped.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, _STREAM_PLANTED]))
    n_out = int(round(count * outlier_fraction))
    while True:
        o1, o2 = np.radians(rng.uniform(1.0, 40.0, 2))
        if o1 + o2 < math.pi / 2 and abs(o1 - delta1) + abs(o2 - delta2) > math.radians(1):
            break
    ids = rng.permutation(count)
    start = rng.uniform(0, 2 * math.pi)
    tracks, bad = [], set()
    for n in range(count):
        d = (o1, o2) if n < n_out else (delta1, delta2)
        amp = amplitude_max * (1.0 - rng.random())
        phase = rng.uniform(-math.pi, math.pi)
        alphas = start + np.array([0.0, d[0], d[0] + d[1]])
        x = amp * np.cos(alphas + phase) + rng.standard_normal(3) * pixel_sigma
        tracks.append(TripletTrack(*map(float, x), track_id=int(ids[n])))
        if n < n_out:
            bad.add(int(ids[n]))
    return tracks, bad


def planted_success(config: RansacConfig, runs: int = 200, pixel_sigma: float = 0.0,
                    seed: int = 0, tol: float = 1e-9, **planted_kw):
    """Share of planted runs with exact recovery and no contaminant inliers."""
    d1 = planted_kw.get("delta1", math.radians(10))
    d2 = planted_kw.get("delta2", math.radians(10))
    wins = 0
    for r in range(runs):
        tracks, bad = planted_tracks(pixel_sigma=pixel_sigma, seed=derive_seed(seed, r), **planted_kw)
        try:
            res = estimate_angles(tracks, replace(config, seed=derive_seed(seed, r, 1)))
        except RotRefineError:
            continue
        exact = abs(res.angles.delta1 - d1) < tol and abs(res.angles.delta2 - d2) < tol
        if exact and not bad.intersection(res.inlier_track_ids):
            wins += 1
    return wins / runs


def calibrate_threshold(grid=(1e-8, 1e-7, 1e-6, 1e-5, 1e-4, 1e-3), runs: int = 200,
                        pixel_sigma: float = 0.0, required: float = 0.95,
                        config: RansacConfig | None = None):
    """Largest threshold on ``grid`` whose planted success rate meets ``required``.

    Returns ``(threshold or None, {threshold: success_rate})``.
    """
    config = config or RansacConfig(p=0.99, q=0.7)
    rates = {
        tau: planted_success(replace(config, k_threshold=tau), runs, pixel_sigma)
        for tau in grid
    }
    ok = [tau for tau, rate in rates.items() if rate >= required]
    return (max(ok) if ok else None), rates


# --- benchmarks ------------------------------------------------------------

def standard_graph(node_count: int = 360, cv_step: int = 10, seed: int = 0) -> fg.RotationGraph:
    """Enc factor per frame plus dense CV windows at 1 deg / 0.05 deg noise."""
    sigma = math.radians(0.05)
    rng = np.random.default_rng(seed)
    truth = np.concatenate([[0.0], np.cumsum(math.radians(1) + rng.standard_normal(node_count - 1) * sigma)])
    spans = {j: truth[j + cv_step] - truth[j] + rng.standard_normal() * sigma
             for j in range(node_count - cv_step)}
    return build_graph(np.full(node_count - 1, math.radians(1)), spans, cv_step, sigma, sigma)


def bench_solve(node_count: int = 360, repeats: int = 20, cv_step: int = 10) -> float:
    """Median wall-clock seconds of ``solve`` on the standard graph."""
    g = standard_graph(node_count, cv_step)
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fg.solve(g)
        times.append(time.perf_counter() - t0)
    return statistics.median(times)
