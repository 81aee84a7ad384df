import math
import random

import pytest

from rotrefine.errors import InsufficientTracks, NoValidPair
from rotrefine.harness import calibrate_threshold, planted_success, planted_tracks
from rotrefine.ransac import (
    DEFAULT_K_THRESHOLD,
    RansacConfig,
    estimate_angles,
    iteration_count,
)
from rotrefine.tracks import TripletTrack
from rotrefine.triplet import forward_tracks

deg = math.radians


def brute_iterations(p, q):
    # smallest m with 1 - (1 - q^2)^m >= p
    m = 1
    while 1 - (1 - q * q) ** m < p:
        m += 1
    return m


@pytest.mark.parametrize("p,q,expected", [(0.99, 0.5, 17), (0.999, 0.5, 25), (0.99, 1.0, 1), (0.99, 0.7, 7)])
def test_iteration_count_examples(p, q, expected):
    assert iteration_count(p, q) == expected


@pytest.mark.parametrize("p", [0.5, 0.9, 0.99, 0.999])
@pytest.mark.parametrize("q", [0.1, 0.3, 0.5, 0.8, 0.95])
def test_iteration_count_matches_search(p, q):
    assert iteration_count(p, q, cap=10**6) == brute_iterations(p, q)


def test_iteration_count_cap_and_literal():
    assert iteration_count(0.999999, 0.01, cap=50) == 50
    assert iteration_count(0.99, 0.5, literal=True) == 1


def test_config_validation():
    for kw in ({"p": 1.0}, {"q": 0.0}, {"k_threshold": 0.0}, {"max_iterations_cap": 0}):
        with pytest.raises(ValueError):
            RansacConfig(**kw)


def test_insufficient_tracks():
    with pytest.raises(InsufficientTracks):
        estimate_angles([TripletTrack(1.0, 2.0, 3.0)])


def test_all_degenerate_raises():
    t = TripletTrack(100.0, 80.0, 50.0, track_id=0)
    u = TripletTrack(200.0, 160.0, 100.0, track_id=1)
    with pytest.raises(NoValidPair):
        estimate_angles([t, u])


def test_clean_tracks_recovered_exactly(rng):
    pts = [(rng.uniform(50, 1000), rng.uniform(-3, 3)) for _ in range(12)]
    tracks = forward_tracks(pts, deg(7), deg(11))
    res = estimate_angles(tracks)
    assert res.angles.delta1 == pytest.approx(deg(7), abs=1e-9)
    assert res.angles.delta2 == pytest.approx(deg(11), abs=1e-9)
    assert res.inlier_count == 12


def test_deterministic_for_seed():
    tracks, _ = planted_tracks(seed=4, pixel_sigma=0.3)
    cfg = RansacConfig(seed=9, k_threshold=1e-4)
    assert estimate_angles(tracks, cfg) == estimate_angles(tracks, cfg)


def test_input_order_invariant():
    tracks, _ = planted_tracks(seed=5, pixel_sigma=0.3)
    cfg = RansacConfig(seed=2, k_threshold=1e-4)
    shuffled = tracks[:]
    random.Random(0).shuffle(shuffled)
    a, b = estimate_angles(tracks, cfg), estimate_angles(shuffled, cfg)
    assert a.angles == b.angles
    assert a.inlier_track_ids == b.inlier_track_ids


def test_winner_has_maximal_score():
    tracks, _ = planted_tracks(seed=6, pixel_sigma=0.2)
    res = estimate_angles(tracks, RansacConfig(k_threshold=1e-4))
    counts = [c for _, c in res.scores]
    assert len(res.scores) == res.iterations_run
    assert res.inlier_count == max(counts)
    # ties keep the earliest iteration
    assert res.scores[counts.index(max(counts))][0] == res.best_pair_ids


def test_planted_contaminants_excluded():
    tracks, bad = planted_tracks(seed=11)
    res = estimate_angles(tracks, RansacConfig(p=0.99, q=0.7, seed=1))
    assert not bad.intersection(res.inlier_track_ids)
    assert res.angles.delta1 == pytest.approx(deg(10), abs=1e-9)


def test_refit_keeps_clean_solution():
    tracks, _ = planted_tracks(seed=12)
    res = estimate_angles(tracks, RansacConfig(q=0.7, refit=True, seed=3))
    assert res.angles.delta2 == pytest.approx(deg(10), abs=1e-9)


@pytest.mark.slow
def test_default_threshold_is_calibrated_value():
    tau, rates = calibrate_threshold(runs=200)
    assert tau == DEFAULT_K_THRESHOLD
    assert planted_success(RansacConfig(q=0.7), runs=200) >= 0.95
