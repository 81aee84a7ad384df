import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rotrefine import graph as fg
from rotrefine.errors import DataFormatError, DisconnectedGraph, MissingPrior

deg = math.radians


def dense_oracle(g: fg.RotationGraph) -> np.ndarray:
    """Stack whitened residual rows and call lstsq; independent of the band path."""
    rows, rhs = [], []
    for f in g.factors:
        r = np.zeros(g.node_count)
        r[f.j], r[f.i] = 1 / f.sigma, -1 / f.sigma
        rows.append(r)
        rhs.append(f.u / f.sigma)
    r = np.zeros(g.node_count)
    r[g.prior.node] = 1 / g.prior.sigma
    rows.append(r)
    rhs.append(g.prior.value / g.prior.sigma)
    return np.linalg.lstsq(np.array(rows), np.array(rhs), rcond=None)[0]


def random_graph(rng, n):
    g = fg.RotationGraph(n)
    for k in range(n - 1):
        g.add_enc(k, k + 1, rng.normal(0.02, 0.01), rng.uniform(1e-4, 1e-2))
    for _ in range(rng.integers(0, 2 * n)):
        i, j = sorted(rng.choice(n, 2, replace=False))
        g.add_cv(int(i), int(j), rng.normal(0.02 * (j - i), 0.01), rng.uniform(1e-4, 1e-2))
    g.set_prior(int(rng.integers(n)), rng.normal(0, 0.1), 1e-3)
    return g


def test_matches_dense_oracle(rng):
    for _ in range(50):
        g = random_graph(rng, int(rng.integers(2, 9)))
        np.testing.assert_allclose(fg.solve(g).angles, dense_oracle(g), atol=1e-10)


def test_normal_matrix_matches_jacobian(rng):
    g = random_graph(rng, 7)
    a = np.zeros((len(g.factors) + 1, 7))
    for r, f in enumerate(g.factors):
        a[r, f.j], a[r, f.i] = 1 / f.sigma, -1 / f.sigma
    a[-1, g.prior.node] = 1 / g.prior.sigma
    system = fg.build_normal_system(g)
    np.testing.assert_allclose(system.to_dense(), a.T @ a, rtol=1e-12)
    assert np.all(np.linalg.eigvalsh(system.to_dense()) > 0)


def test_bandwidth_is_longest_span():
    g = fg.dead_reckoning_graph([0.1] * 9, 0.01)
    g.add_cv(2, 6, 0.4, 0.01)
    assert g.bandwidth == 4
    assert fg.build_normal_system(g).bandwidth == 4


def test_missing_prior():
    g = fg.RotationGraph(3)
    g.add_enc(0, 1, 0.1, 0.01)
    g.add_enc(1, 2, 0.1, 0.01)
    with pytest.raises(MissingPrior):
        fg.solve(g)


def test_disconnected_reports_node():
    g = fg.RotationGraph(4)
    g.add_enc(0, 1, 0.1, 0.01)
    g.add_enc(2, 3, 0.1, 0.01)
    g.set_prior(0, 0.0)
    with pytest.raises(DisconnectedGraph) as info:
        fg.solve(g)
    assert "2" in str(info.value)


def test_invalid_factors_rejected():
    g = fg.RotationGraph(3)
    with pytest.raises(ValueError):
        g.add_enc(1, 1, 0.1, 0.01)
    with pytest.raises(ValueError):
        g.add_cv(0, 2, 0.1, 0.0)
    with pytest.raises(IndexError):
        g.add_enc(0, 3, 0.1, 0.01)


def test_dead_reckoning_identity(rng):
    inc = rng.normal(deg(1), deg(0.05), 359)
    angles = fg.solve(fg.dead_reckoning_graph(inc, deg(0.05))).angles
    expected = np.concatenate([[0.0], np.cumsum(inc)])
    assert np.max(np.abs(angles - expected)) < 1e-12


def two_step(u_cv, sigma_cv):
    g = fg.dead_reckoning_graph([deg(1), deg(1)], deg(0.05))
    g.add_cv(0, 2, u_cv, sigma_cv)
    return fg.solve(g).angles


def test_equal_weights_split_disagreement():
    # Enc says 2 deg, CV says 2.3 deg, equal sigma: the total lands at the
    # weighted mean of 2 (weight 1/2 for the chain) and 2.3 (weight 1)
    theta = two_step(deg(2.3), deg(0.05))
    assert math.degrees(theta[2]) == pytest.approx((2 * 0.5 + 2.3 * 1.0) / 1.5, abs=1e-9)
    assert math.degrees(theta[1]) == pytest.approx(1.1, abs=1e-9)


def test_tight_cv_dominates():
    theta = two_step(deg(2.08), 1e-8)
    assert math.degrees(theta[2]) == pytest.approx(2.08, abs=1e-6)
    assert math.degrees(theta[1]) == pytest.approx(1.04, abs=1e-6)


def test_gradient_vanishes_at_solution(rng):
    g = random_graph(rng, 6)
    theta = fg.solve(g).angles
    base = fg.weighted_sse(g, theta)
    for n in range(6):
        for h in (1e-7, -1e-7):
            step = theta.copy()
            step[n] += h
            assert fg.weighted_sse(g, step) >= base - 1e-6 * max(1.0, base)


def test_prior_shift_translates_solution(rng):
    g = random_graph(rng, 6)
    a = fg.solve(g).angles
    g.set_prior(g.prior.node, g.prior.value + 0.7, g.prior.sigma)
    b = fg.solve(g).angles
    np.testing.assert_allclose(b - a, 0.7, atol=1e-10)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.permutations(range(6)))
def test_node_relabelling_invariant(seed, perm):
    g = random_graph(np.random.default_rng(seed), 6)
    perm = list(perm)
    h = fg.RotationGraph(6)
    for f in g.enc_factors:
        h.add_enc(perm[f.i], perm[f.j], f.u, f.sigma)
    for f in g.cv_factors:
        h.add_cv(perm[f.i], perm[f.j], f.u, f.sigma)
    h.set_prior(perm[g.prior.node], g.prior.value, g.prior.sigma)
    a, b = fg.solve(g).angles, fg.solve(h).angles
    np.testing.assert_allclose(b[perm], a, atol=1e-9)


def test_sse_examples():
    g = fg.dead_reckoning_graph([0.1, 0.2], 0.1)
    assert fg.weighted_sse(g, [0.0, 0.1, 0.3]) == pytest.approx(0.0, abs=1e-24)
    assert fg.weighted_sse(g, [0.0, 0.2, 0.3]) == pytest.approx(2.0)
    assert fg.solve(g).weighted_sse == pytest.approx(0.0, abs=1e-18)
    with pytest.raises(ValueError):
        fg.weighted_sse(g, [0.0])


def test_attach_dense_and_disjoint():
    est = {j: 0.1 for j in range(360)}
    g = fg.dead_reckoning_graph([0.01] * 359, 0.001)
    fg.attach_cv_factors(g, 360, {j: u for j, u in est.items() if j < 350}, 10, 0.001)
    assert len(g.cv_factors) == 350
    h = fg.dead_reckoning_graph([0.01] * 359, 0.001)
    fg.attach_cv_factors(h, 360, {j: u for j, u in est.items() if j < 350}, 10, 0.001, "disjoint")
    assert len(h.cv_factors) == 35


def test_attach_skips_failures_and_wraps():
    g = fg.dead_reckoning_graph([0.01] * 9, 0.001)
    fg.attach_cv_factors(g, 10, {0: 0.1, 1: math.nan, 2: None}, 5, 0.001)
    assert len(g.cv_factors) == 1
    fg.attach_cv_factors(g, 10, {8: 1.0}, 5, 0.001, wrap=True)
    assert g.cv_factors[-1].j == 3
    assert g.cv_factors[-1].u == pytest.approx(1.0 - 2 * math.pi)
    with pytest.raises(IndexError):
        fg.attach_cv_factors(g, 10, {8: 1.0}, 5, 0.001)


def test_text_round_trip(rng):
    g = random_graph(rng, 8)
    h = fg.loads(fg.dumps(g))
    assert h.node_count == 8
    assert h.enc_factors == g.enc_factors and h.cv_factors == g.cv_factors
    assert h.prior == g.prior


def test_text_errors_carry_line():
    with pytest.raises(DataFormatError, match="line 2"):
        fg.loads("PRIOR 0 0.0 1e-6\nENC 0 x 0.1 0.01\n")
