"""RANSAC over track pairs, scoring consensus on the k ratio."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InsufficientTracks, NoValidPair, TripletError
from .triplet import DEN_EPS, AnglePair, k_values, solve_triplet

# Largest value on a decade grid keeping >= 95% of noise-free planted runs
# (200 runs, 20 tracks, 30% contaminants) free of contaminant inliers. Noisy data needs
# a looser gate; NOISY_K_THRESHOLD minimised the median angle error at
# 0.3-0.5 px. See harness.calibrate_threshold.
DEFAULT_K_THRESHOLD = 1e-5
NOISY_K_THRESHOLD = 1e-4


@dataclass(frozen=True)
class RansacConfig:
    """Consensus parameters.

    ``q`` is the probability that a single sampled track is reliable and
    ``p`` the desired probability of drawing an all-reliable pair at least
    once. ``k_threshold`` gates the squared k deviation of a candidate track.
    """

    p: float = 0.99
    q: float = 0.5
    k_threshold: float = DEFAULT_K_THRESHOLD
    max_iterations_cap: int = 10_000
    seed: int = 0
    literal_iterations: bool = False
    refit: bool = False

    def __post_init__(self):
        if not 0 < self.p < 1:
            raise ValueError("p must lie in (0, 1)")
        if not 0 < self.q <= 1:
            raise ValueError("q must lie in (0, 1]")
        if not self.k_threshold > 0:
            raise ValueError("k_threshold must be > 0")
        if self.max_iterations_cap < 1:
            raise ValueError("max_iterations_cap must be >= 1")


@dataclass
class RansacResult:
    angles: AnglePair
    inlier_track_ids: list[int]
    iterations_run: int
    best_pair_ids: tuple[int, int]
    scores: list[tuple[tuple[int, int], int]] = field(default_factory=list, repr=False)

    @property
    def inlier_count(self) -> int:
        return len(self.inlier_track_ids)


def iteration_count(p: float, q: float, cap: int = 10_000, literal: bool = False) -> int:
    """Number of pair samples needed to hit an all-reliable pair with prob. p.

    ``literal=True`` evaluates the ratio ``(1 - p) / (1 - q^2)`` instead of
    the log form; it exists only for comparison and is almost always 1.
    """
    if q >= 1.0:
        return 1
    if literal:
        m = math.ceil((1.0 - p) / (1.0 - q * q))
    else:
        m = math.ceil(math.log(1.0 - p) / math.log(1.0 - q * q))
    return int(min(max(m, 1), cap))


def _sample_pair(seed: int, iteration: int, n: int) -> tuple[int, int]:
    rng = np.random.default_rng(np.random.SeedSequence([seed, iteration]))
    i, j = rng.choice(n, size=2, replace=False)
    return (int(i), int(j)) if i < j else (int(j), int(i))


def _inliers(xs: np.ndarray, a: int, b: int, tau: float, den_eps: float):
    """Mask of tracks consistent with the k of pair (a, b), or None."""
    k_ref = k_values(xs[a], xs[b][None, :], den_eps)[0]
    if np.isnan(k_ref):
        return None
    k1 = k_values(xs[a], xs, den_eps)
    k2 = k_values(xs[b], xs, den_eps)
    with np.errstate(invalid="ignore"):
        mask = ((k_ref - k1) ** 2 < tau) & ((k_ref - k2) ** 2 < tau)
    mask[[a, b]] = True
    return mask


def estimate_angles(tracks, config: RansacConfig | None = None, den_eps: float = DEN_EPS) -> RansacResult:
    """Robust (delta1, delta2) from many tracks of one frame triplet.

    Tracks are processed in ``track_id`` order so the result does not depend
    on input order. Iteration ``m`` draws its pair from a stream seeded by
    ``(seed, m)``; a pair whose k or closed-form solution is degenerate or
    out of domain scores nothing. Ties keep the earliest iteration.
    """
    config = config or RansacConfig()
    tracks = sorted(tracks, key=lambda t: t.track_id)
    n = len(tracks)
    if n < 2:
        raise InsufficientTracks(f"need at least 2 tracks, got {n}")
    xs = np.array([t.xs for t in tracks], dtype=float)
    iterations = iteration_count(
        config.p, config.q, config.max_iterations_cap, config.literal_iterations
    )

    best = None
    scores = []
    for it in range(iterations):
        a, b = _sample_pair(config.seed, it, n)
        ids = (tracks[a].track_id, tracks[b].track_id)
        mask = _inliers(xs, a, b, config.k_threshold, den_eps)
        if mask is None:
            scores.append((ids, 0))
            continue
        try:
            angles = solve_triplet(tracks[a], tracks[b], den_eps)
        except TripletError:
            scores.append((ids, 0))
            continue
        count = int(mask.sum())
        scores.append((ids, count))
        if best is None or count > best[0]:
            best = (count, ids, angles, mask)

    if best is None:
        raise NoValidPair(f"all {iterations} sampled pairs were degenerate or out of domain")
    _, ids, angles, mask = best
    inlier_idx = np.flatnonzero(mask)
    if config.refit:
        angles = _refit(tracks, inlier_idx, angles, den_eps)
    return RansacResult(
        angles=angles,
        inlier_track_ids=[tracks[i].track_id for i in inlier_idx],
        iterations_run=iterations,
        best_pair_ids=ids,
        scores=scores,
    )


def _refit(tracks, inlier_idx, fallback: AnglePair, den_eps: float) -> AnglePair:
    """Mean of the closed-form solutions over all inlier pairs."""
    sols = []
    for i, j in itertools.combinations(inlier_idx, 2):
        try:
            sols.append(solve_triplet(tracks[i], tracks[j], den_eps))
        except TripletError:
            continue
    if not sols:
        return fallback
    return AnglePair(
        float(np.mean([s.delta1 for s in sols])),
        float(np.mean([s.delta2 for s in sols])),
        float(np.mean([s.k for s in sols])),
    )
