import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from rotrefine.errors import ArccosDomain, ConstraintViolated, DegenerateTrackPair, TripletError
from rotrefine.tracks import TripletTrack
from rotrefine.triplet import compute_k, forward_tracks, solve_triplet

deg = math.radians


def random_pair(rng):
    return [(rng.uniform(50, 1000), rng.uniform(-math.pi, math.pi)) for _ in range(2)]


def test_identical_tracks_are_degenerate():
    t = TripletTrack(100.0, 80.0, 50.0)
    with pytest.raises(DegenerateTrackPair):
        compute_k(t, t)


@pytest.mark.parametrize("c", [-3.0, 0.01, 2.0, 1e4])
def test_k_invariant_to_scaling(c):
    a, b = forward_tracks([(300, 0.4), (700, -1.9)], deg(8), deg(13))
    scaled = TripletTrack(*(c * v for v in a.xs))
    assert compute_k(scaled, b) == pytest.approx(compute_k(a, b), rel=1e-12)


def test_k_matches_forward_model(rng):
    for _ in range(50):
        d1, d2 = deg(rng.uniform(1, 40)), deg(rng.uniform(1, 40))
        a, b = forward_tracks(random_pair(rng), d1, d2, start=rng.uniform(0, 2 * math.pi))
        assert compute_k(a, b) == pytest.approx(math.sin(d1 + d2) / math.sin(d1), rel=1e-9)


def test_k_symmetric_in_pair():
    a, b = forward_tracks([(300, 0.4), (700, -1.9)], deg(8), deg(13))
    assert compute_k(a, b) == pytest.approx(compute_k(b, a), rel=1e-13)


@pytest.mark.parametrize("d1,d2", [(10, 10), (5, 7), (1, 1), (40, 40), (30, 5)])
def test_recovers_angles(rng, d1, d2):
    a, b = forward_tracks(random_pair(rng), deg(d1), deg(d2))
    res = solve_triplet(a, b)
    assert res.delta1 == pytest.approx(deg(d1), abs=1e-9)
    assert res.delta2 == pytest.approx(deg(d2), abs=1e-9)
    assert res.k == pytest.approx(math.sin(res.delta1 + res.delta2) / math.sin(res.delta1), abs=1e-9)


def test_recovery_at_arbitrary_start_pose(rng):
    a, b = forward_tracks(random_pair(rng), deg(6), deg(9), start=deg(217.0))
    res = solve_triplet(a, b)
    assert (res.delta1, res.delta2) == pytest.approx((deg(6), deg(9)), abs=1e-9)


@pytest.mark.parametrize("d1,d2", [(50, 50), (60, 40), (80, 30), (20, 75)])
def test_total_beyond_right_angle_rejected(rng, d1, d2):
    # arcsin alone would alias these to a total of 180 deg minus the true total
    for _ in range(20):
        a, b = forward_tracks(random_pair(rng), deg(d1), deg(d2))
        with pytest.raises(TripletError):
            solve_triplet(a, b)


def test_out_of_domain_argument_reported():
    a = TripletTrack(68.0, 462.5, 266.2)
    b = TripletTrack(333.1, 69.4, 107.6)
    with pytest.raises(ArccosDomain):
        solve_triplet(a, b)


def test_non_positive_angle_reported():
    a = TripletTrack(-29.9, -221.8, 361.6)
    b = TripletTrack(259.8, -57.2, 384.8)
    with pytest.raises(ConstraintViolated):
        solve_triplet(a, b)


@settings(max_examples=300, deadline=None)
@given(
    d1=st.floats(1, 40), d2=st.floats(1, 40),
    amps=st.tuples(st.floats(20, 1000), st.floats(20, 1000)),
    phases=st.tuples(st.floats(-3.1, 3.1), st.floats(-3.1, 3.1)),
    c=st.floats(0.01, 100),
)
def test_amplitude_scale_invariance(d1, d2, amps, phases, c):
    assume(d1 + d2 < 89)
    assume(abs(math.sin(phases[0] - phases[1])) > 0.05)
    assume(min(abs(math.cos(phases[0])), abs(math.cos(phases[1]))) > 0.05)
    pts = list(zip(amps, phases))
    try:
        base = solve_triplet(*forward_tracks(pts, deg(d1), deg(d2)))
    except DegenerateTrackPair:
        return
    for which in (0, 1):
        scaled = list(pts)
        scaled[which] = (amps[which] * c, phases[which])
        res = solve_triplet(*forward_tracks(scaled, deg(d1), deg(d2)))
        assert res.delta1 == pytest.approx(base.delta1, abs=1e-11)
        assert res.delta2 == pytest.approx(base.delta2, abs=1e-11)
    assert base.k == pytest.approx(math.sin(base.delta1 + base.delta2) / math.sin(base.delta1), abs=1e-9)


def test_error_grows_with_pixel_noise():
    rng = np.random.default_rng(2024)
    medians = []
    for sigma in (0.0, 0.1, 0.5, 1.0):
        errs = []
        for _ in range(1000):
            d1, d2 = deg(rng.uniform(5, 30)), deg(rng.uniform(5, 30))
            a, b = forward_tracks(random_pair(rng), d1, d2)
            a = TripletTrack(*(np.array(a.xs) + rng.normal(0, sigma, 3)))
            b = TripletTrack(*(np.array(b.xs) + rng.normal(0, sigma, 3)))
            try:
                res = solve_triplet(a, b)
            except TripletError:
                continue
            errs.append(abs(res.delta1 - d1))
        medians.append(np.median(errs))
    assert medians[0] < 1e-9
    assert all(lo <= hi for lo, hi in zip(medians, medians[1:]))


def test_zero_first_column_uses_other_track():
    # amplitude * cos(pi/2) puts track a at x1 = 0; the cos(delta1) form
    # divides by x1, so track b must serve as reference
    a, b = forward_tracks([(400, math.pi / 2), (600, 0.7)], deg(12), deg(5))
    assert abs(a.x1) < 1e-12
    res = solve_triplet(a, b)
    assert (res.delta1, res.delta2) == pytest.approx((deg(12), deg(5)), abs=1e-9)
