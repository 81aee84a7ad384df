"""Keypoint ingestion, mutual nearest-neighbour matching and triplet tracks."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist

from .errors import DataFormatError
from .projection import SimulatedRun, fmt

DEFAULT_Y_SHIFT_PX = 2.0
SYNTHETIC_ID = -1

_STREAM_DESCRIPTORS = 4
_STREAM_THROTTLE = 5


@dataclass
class FrameKeypoints:
    """All keypoints detected in one frame, stored column-wise."""

    frame: int
    ids: np.ndarray
    x: np.ndarray
    y: np.ndarray
    descriptors: np.ndarray

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=int)
        self.x = np.asarray(self.x, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        self.descriptors = np.atleast_2d(np.asarray(self.descriptors, dtype=float))
        n = len(self.ids)
        if not (len(self.x) == len(self.y) == n and self.descriptors.shape[0] == n):
            raise ValueError("keypoint columns have inconsistent lengths")

    def __len__(self):
        return len(self.ids)

    @property
    def descriptor_length(self) -> int:
        return self.descriptors.shape[1]

    def subset(self, index) -> "FrameKeypoints":
        index = np.asarray(index, dtype=int)
        return FrameKeypoints(
            self.frame, self.ids[index], self.x[index], self.y[index], self.descriptors[index]
        )


@dataclass(frozen=True)
class TripletTrack:
    x1: float
    x2: float
    x3: float
    y1: float = 0.0
    y2: float = 0.0
    y3: float = 0.0
    track_id: int = 0
    source_ids: tuple[int, int, int] = field(default=(SYNTHETIC_ID,) * 3)

    @property
    def xs(self) -> tuple[float, float, float]:
        return (self.x1, self.x2, self.x3)

    @property
    def y_shift(self) -> float:
        ys = (self.y1, self.y2, self.y3)
        return max(ys) - min(ys)


def match_mutual_nn(desc_a, desc_b) -> list[tuple[int, int]]:
    """Index pairs ``(i, j)`` that are each other's L2 nearest neighbour.

    Ties resolve to the lowest index. Output is sorted by ``i``.
    """
    desc_a = np.atleast_2d(np.asarray(getattr(desc_a, "descriptors", desc_a), dtype=float))
    desc_b = np.atleast_2d(np.asarray(getattr(desc_b, "descriptors", desc_b), dtype=float))
    if desc_a.shape[0] == 0 or desc_b.shape[0] == 0 or desc_a.size == 0 or desc_b.size == 0:
        raise ValueError("cannot match an empty keypoint set")
    if desc_a.shape[1] != desc_b.shape[1]:
        raise ValueError(
            f"descriptor length mismatch: {desc_a.shape[1]} vs {desc_b.shape[1]}"
        )
    dist = cdist(desc_a, desc_b, "sqeuclidean")
    # argmin returns the first minimum, i.e. the lowest index on ties
    a_to_b = dist.argmin(axis=1)
    b_to_a = dist.argmin(axis=0)
    return [(i, int(j)) for i, j in enumerate(a_to_b) if b_to_a[j] == i]


def build_triplet_tracks(
    kp1: FrameKeypoints,
    kp2: FrameKeypoints,
    kp3: FrameKeypoints,
    y_shift_threshold: float = DEFAULT_Y_SHIFT_PX,
) -> list[TripletTrack]:
    """Chain mutual matches 1-2 and 2-3 into tracks and apply the row filter.

    A track survives only if every pairwise row difference within the triplet
    is strictly below ``y_shift_threshold``. Frames 1 and 3 are not matched
    directly.
    """
    if min(len(kp1), len(kp2), len(kp3)) == 0:
        return []
    m12 = dict(match_mutual_nn(kp1.descriptors, kp2.descriptors))
    m23 = dict(match_mutual_nn(kp2.descriptors, kp3.descriptors))
    tracks = []
    for i, j in m12.items():
        k = m23.get(j)
        if k is None:
            continue
        ys = (kp1.y[i], kp2.y[j], kp3.y[k])
        if max(ys) - min(ys) >= y_shift_threshold:
            continue
        tracks.append(
            TripletTrack(
                x1=float(kp1.x[i]), x2=float(kp2.x[j]), x3=float(kp3.x[k]),
                y1=float(ys[0]), y2=float(ys[1]), y3=float(ys[2]),
                track_id=len(tracks),
                source_ids=(int(kp1.ids[i]), int(kp2.ids[j]), int(kp3.ids[k])),
            )
        )
    assert all(t.y_shift < y_shift_threshold for t in tracks)
    return tracks


def synthetic_keypoints(
    run: SimulatedRun, frame: int, descriptor_noise: float = 0.0, seed: int = 0
) -> FrameKeypoints:
    """Keypoints for one simulated frame with one-hot descriptors per point id.

    ``descriptor_noise`` adds Gaussian perturbation to the descriptors, which
    produces false matches once it is comparable to 1/sqrt(2).
    """
    ids = np.asarray(run.point_ids, dtype=int)
    visible = np.isfinite(run.obs_x[frame]) & np.isfinite(run.obs_y[frame])
    dim = max(int(ids.max()) + 1 if len(ids) else 1, 1)
    desc = np.zeros((len(ids), dim))
    desc[np.arange(len(ids)), ids] = 1.0
    if descriptor_noise > 0:
        rng = np.random.default_rng(
            np.random.SeedSequence([seed, _STREAM_DESCRIPTORS, frame])
        )
        desc += rng.standard_normal(desc.shape) * descriptor_noise
    kp = FrameKeypoints(frame, ids, run.obs_x[frame], run.obs_y[frame], desc)
    return kp.subset(np.flatnonzero(visible))


def simulated_tracks(
    run: SimulatedRun,
    frames: tuple[int, int, int],
    descriptor_noise: float = 0.0,
    seed: int = 0,
    y_shift_threshold: float = DEFAULT_Y_SHIFT_PX,
    max_tracks: int | None = None,
) -> list[TripletTrack]:
    """Run the matching pipeline on synthetic keypoints of three frames.

    ``max_tracks`` keeps a seeded random subset, mimicking scenes with few
    trackable features.
    """
    kps = [synthetic_keypoints(run, f, descriptor_noise, seed) for f in frames]
    tracks = build_triplet_tracks(*kps, y_shift_threshold=y_shift_threshold)
    if max_tracks is not None and len(tracks) > max_tracks:
        rng = np.random.default_rng(np.random.SeedSequence([seed, _STREAM_THROTTLE, *frames]))
        keep = np.sort(rng.choice(len(tracks), size=max_tracks, replace=False))
        tracks = [tracks[i] for i in keep]
    return tracks


def keypoint_header(descriptor_length: int) -> list[str]:
    return ["frame", "kp_id", "x_px", "y_px"] + [f"d{i}" for i in range(descriptor_length)]


def write_keypoints(path, frames) -> None:
    frames = list(frames.values()) if isinstance(frames, dict) else list(frames)
    lengths = {kp.descriptor_length for kp in frames if len(kp)}
    if len(lengths) > 1:
        raise ValueError(f"inconsistent descriptor lengths {sorted(lengths)}")
    dim = lengths.pop() if lengths else 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(keypoint_header(dim))
        for kp in frames:
            for n in range(len(kp)):
                w.writerow(
                    [kp.frame, int(kp.ids[n]), fmt(kp.x[n]), fmt(kp.y[n])]
                    + [fmt(v) for v in kp.descriptors[n]]
                )


def load_keypoints(path) -> dict[int, FrameKeypoints]:
    """Parse a keypoint CSV into per-frame keypoint sets (sorted by frame)."""
    rows: dict[int, list] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:4] != ["frame", "kp_id", "x_px", "y_px"]:
            raise DataFormatError(f"bad keypoint header {header}", line=1)
        dim = len(header) - 4
        if header[4:] != [f"d{i}" for i in range(dim)]:
            raise DataFormatError("descriptor columns must be d0..d{D-1}", line=1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) - 4 != dim:
                raise DataFormatError(
                    f"descriptor length {len(row) - 4} does not match header length {dim}",
                    line=lineno,
                )
            try:
                frame, kp_id = int(row[0]), int(row[1])
                values = [float(v) for v in row[2:]]
            except ValueError as exc:
                raise DataFormatError(str(exc), line=lineno) from None
            rows.setdefault(frame, []).append((kp_id, values))
    out = {}
    for frame in sorted(rows):
        ids = [r[0] for r in rows[frame]]
        vals = np.array([r[1] for r in rows[frame]], dtype=float).reshape(len(ids), dim + 2)
        out[frame] = FrameKeypoints(frame, ids, vals[:, 0], vals[:, 1], vals[:, 2:])
    return out


TRACK_HEADER = ["track_id", "x1", "y1", "x2", "y2", "x3", "y3"]


def write_tracks(path_or_file, tracks) -> None:
    own = isinstance(path_or_file, (str, Path))
    fh = open(path_or_file, "w", newline="") if own else path_or_file
    try:
        w = csv.writer(fh)
        w.writerow(TRACK_HEADER)
        for t in tracks:
            w.writerow([t.track_id] + [fmt(v) for v in (t.x1, t.y1, t.x2, t.y2, t.x3, t.y3)])
    finally:
        if own:
            fh.close()


def load_tracks(path) -> list[TripletTrack]:
    tracks = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != TRACK_HEADER:
            raise DataFormatError(f"bad track header {header}", line=1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                tid = int(row[0])
                x1, y1, x2, y2, x3, y3 = (float(v) for v in row[1:7])
            except (ValueError, IndexError) as exc:
                raise DataFormatError(str(exc) or "too few columns", line=lineno) from None
            if len(row) != 7:
                raise DataFormatError(f"expected 7 columns, got {len(row)}", line=lineno)
            tracks.append(TripletTrack(x1, x2, x3, y1, y2, y3, track_id=tid))
    return tracks
