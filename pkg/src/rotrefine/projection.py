"""1-DOF projection model and synthetic scene / trajectory generation.

A point rotating about the detector's vertical axis (placed at x = 0) images
to column ``x(alpha) = amplitude * cos(alpha + phase)`` and a constant row.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

# Arbitrary default; the physical detector size is not known.
DETECTOR_HEIGHT_PX = 2048.0

# RNG stream tags, combined with the seed as SeedSequence entropy.
_STREAM_SCENE = 1
_STREAM_STEPS = 2
_STREAM_OBS = 3

NOISE_MODELS = ("random_walk", "absolute")


def wrap_angle(angle):
    """Map an angle (or array) into [-pi, pi)."""
    return (np.asarray(angle) + np.pi) % (2 * np.pi) - np.pi


@dataclass(frozen=True)
class ScenePoint:
    amplitude: float
    phase: float
    row: float = 0.0

    def __post_init__(self):
        if not self.amplitude >= 0:
            raise ValueError(f"amplitude must be >= 0, got {self.amplitude}")
        object.__setattr__(self, "phase", float(wrap_angle(self.phase)))


@dataclass(frozen=True)
class TrajectorySpec:
    """Acquisition parameters for a simulated scan.

    ``noise_model="random_walk"`` perturbs every step increment so errors
    accumulate; ``"absolute"`` perturbs every angle independently around the
    nominal grid.
    """

    frame_count: int = 360
    commanded_step: float = math.radians(1.0)
    step_sigma: float = math.radians(0.05)
    pixel_sigma: float = 0.0
    seed: int = 0
    noise_model: str = "random_walk"

    def __post_init__(self):
        if self.frame_count < 3:
            raise ValueError("frame_count must be >= 3")
        if not self.commanded_step > 0:
            raise ValueError("commanded_step must be > 0")
        if not self.step_sigma >= 0:
            raise ValueError("step_sigma must be >= 0")
        if not self.pixel_sigma >= 0:
            raise ValueError("pixel_sigma must be >= 0")
        if self.noise_model not in NOISE_MODELS:
            raise ValueError(f"noise_model must be one of {NOISE_MODELS}")


@dataclass
class SimulatedRun:
    """Ground truth and observations of one simulated scan.

    ``obs_x[f, p]`` / ``obs_y[f, p]`` hold the observed pixel position of
    point ``point_ids[p]`` in frame ``f``.
    """

    true_angles: np.ndarray
    commanded_increments: np.ndarray
    point_ids: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    obs_x: np.ndarray | None = None
    obs_y: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.true_angles)
        if self.obs_x is None:
            self.obs_x = np.zeros((n, 0))
        if self.obs_y is None:
            self.obs_y = np.zeros((n, 0))

    @property
    def frame_count(self) -> int:
        return len(self.true_angles)

    @property
    def commanded_angles(self) -> np.ndarray:
        """Dead-reckoned trajectory: cumulative commanded increments."""
        return np.concatenate([[0.0], np.cumsum(self.commanded_increments)])

    def observations(self, frame: int) -> list[tuple[int, float, float]]:
        return [
            (int(pid), float(x), float(y))
            for pid, x, y in zip(self.point_ids, self.obs_x[frame], self.obs_y[frame])
        ]

    def save(self, directory) -> tuple[Path, Path]:
        """Write ``angles.csv`` and ``obs.csv`` into ``directory``."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        angles_path = directory / "angles.csv"
        obs_path = directory / "obs.csv"
        with open(angles_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["frame", "true_angle_rad", "commanded_increment_rad"])
            for f, theta in enumerate(self.true_angles):
                inc = fmt(self.commanded_increments[f - 1]) if f > 0 else ""
                w.writerow([f, fmt(theta), inc])
        with open(obs_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["frame", "point_id", "x_px", "y_px"])
            for f in range(self.frame_count):
                for p, pid in enumerate(self.point_ids):
                    w.writerow([f, int(pid), fmt(self.obs_x[f, p]), fmt(self.obs_y[f, p])])
        return angles_path, obs_path

    @classmethod
    def load(cls, angles_path, obs_path=None) -> "SimulatedRun":
        from .errors import DataFormatError

        frames, angles, incs = [], [], []
        with open(angles_path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != ["frame", "true_angle_rad", "commanded_increment_rad"]:
                raise DataFormatError(f"unexpected angles header {header}", line=1)
            for lineno, row in enumerate(reader, start=2):
                try:
                    frames.append(int(row[0]))
                    angles.append(float(row[1]))
                    if frames[-1] > 0:
                        incs.append(float(row[2]))
                except (ValueError, IndexError) as exc:
                    raise DataFormatError(str(exc), line=lineno) from None
        if frames != list(range(len(frames))):
            raise DataFormatError("frames must be 0..N-1 in order")
        run = cls(np.array(angles), np.array(incs))
        if obs_path is not None:
            run.point_ids, run.obs_x, run.obs_y = _load_obs(obs_path, len(frames))
        return run


def load_observations(path) -> SimulatedRun:
    """Observations only; true angles are unknown (NaN)."""
    from .errors import DataFormatError

    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader, None)
        try:
            frames = [int(row[0]) for row in reader if row]
        except (ValueError, IndexError) as exc:
            raise DataFormatError(str(exc)) from None
    n = max(frames, default=-1) + 1
    run = SimulatedRun(np.full(n, np.nan), np.full(max(n - 1, 0), np.nan))
    run.point_ids, run.obs_x, run.obs_y = _load_obs(path, n)
    return run


def _load_obs(path, frame_count):
    from .errors import DataFormatError

    rows = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["frame", "point_id", "x_px", "y_px"]:
            raise DataFormatError(f"unexpected obs header {header}", line=1)
        for lineno, row in enumerate(reader, start=2):
            try:
                rows[(int(row[0]), int(row[1]))] = (float(row[2]), float(row[3]))
            except (ValueError, IndexError) as exc:
                raise DataFormatError(str(exc), line=lineno) from None
    ids = np.array(sorted({pid for _, pid in rows}), dtype=int)
    x = np.full((frame_count, len(ids)), np.nan)
    y = np.full((frame_count, len(ids)), np.nan)
    col = {pid: c for c, pid in enumerate(ids)}
    for (f, pid), (xv, yv) in rows.items():
        if not 0 <= f < frame_count:
            raise DataFormatError(f"frame {f} outside 0..{frame_count - 1}")
        x[f, col[pid]] = xv
        y[f, col[pid]] = yv
    return ids, x, y


def fmt(value: float) -> str:
    """Round-trip exact float formatting (17 significant digits)."""
    return format(float(value), ".17g")


def project(point: ScenePoint, angle):
    """Detector column of ``point`` at rotation ``angle`` (radians)."""
    return point.amplitude * np.cos(angle + point.phase)


def make_scene(
    point_count: int,
    amplitude_max: float = 1000.0,
    seed: int = 0,
    height: float = DETECTOR_HEIGHT_PX,
) -> list[ScenePoint]:
    if point_count < 2:
        raise ValueError(f"point_count must be >= 2, got {point_count}")
    if not amplitude_max > 0:
        raise ValueError("amplitude_max must be > 0")
    rng = np.random.default_rng(np.random.SeedSequence([seed, _STREAM_SCENE]))
    # 1 - U[0, 1) lies in (0, 1], so amplitudes are strictly positive
    amps = amplitude_max * (1.0 - rng.random(point_count))
    phases = rng.uniform(-np.pi, np.pi, point_count)
    rows = rng.uniform(0.0, height, point_count)
    return [ScenePoint(float(a), float(p), float(r)) for a, p, r in zip(amps, phases, rows)]


def simulate_true_angles(spec: TrajectorySpec) -> np.ndarray:
    n = spec.frame_count
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, _STREAM_STEPS]))
    noise = rng.standard_normal(n - 1) * spec.step_sigma
    if spec.noise_model == "random_walk":
        return np.concatenate([[0.0], np.cumsum(spec.commanded_step + noise)])
    nominal = spec.commanded_step * np.arange(n, dtype=float)
    return nominal + np.concatenate([[0.0], noise])


def simulate_trajectory(spec: TrajectorySpec, scene: list[ScenePoint]) -> SimulatedRun:
    """Simulate true angles and noisy point observations for every frame.

    Observation noise for frame ``f`` comes from its own seed-derived stream
    and is drawn in point order, so runs are reproducible regardless of the
    order in which frames are generated.
    """
    n = spec.frame_count
    true_angles = simulate_true_angles(spec)
    commanded = np.full(n - 1, spec.commanded_step)

    amps = np.array([p.amplitude for p in scene], dtype=float)
    phases = np.array([p.phase for p in scene], dtype=float)
    rows = np.array([p.row for p in scene], dtype=float)
    obs_x = amps[None, :] * np.cos(true_angles[:, None] + phases[None, :])
    obs_y = np.broadcast_to(rows, obs_x.shape).copy()
    if spec.pixel_sigma > 0 and len(scene):
        for f in range(n):
            rng = np.random.default_rng(np.random.SeedSequence([spec.seed, _STREAM_OBS, f]))
            dx, dy = rng.standard_normal((2, len(scene))) * spec.pixel_sigma
            obs_x[f] += dx
            obs_y[f] += dy
    return SimulatedRun(
        true_angles=true_angles,
        commanded_increments=commanded,
        point_ids=np.arange(len(scene)),
        obs_x=obs_x,
        obs_y=obs_y,
    )
