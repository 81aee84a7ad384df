"""Closed-form relative rotation angles from two tracks over three frames.

With ``x_i = a cos(phi + alpha_i)`` and ``alpha = (0, d1, d1 + d2)`` each
track is a linear combination of ``(1, cos d1, cos(d1+d2))`` and
``(0, sin d1, sin(d1+d2))``. Eliminating the per-point coefficients gives

    k      = (x3 x~1 - x1 x~3) / (x2 x~1 - x1 x~2) = sin(d1 + d2) / sin(d1)
    cos d1 = ((1 - k^2) x1^2 - (x3 - k x2)^2) / (2 k x1 (x3 - k x2))
    d2     = arcsin(k sin d1) - d1

The first-frame column ``x1`` plays the role of the reference sample in the
k ratio. Uniqueness needs ``d1, d2 > 0`` and ``d1 + d2 < pi/2``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ArccosDomain, ArcsinDomain, ConstraintViolated, DegenerateTrackPair
from .tracks import TripletTrack

DEN_EPS = 1e-9
DOMAIN_EPS = 1e-9


@dataclass(frozen=True)
class AnglePair:
    delta1: float
    delta2: float
    k: float

    @property
    def total(self) -> float:
        return self.delta1 + self.delta2


def _xs(track) -> np.ndarray:
    if isinstance(track, TripletTrack):
        return np.array(track.xs, dtype=float)
    return np.asarray(track, dtype=float)


def k_values(ref, others, den_eps: float = DEN_EPS) -> np.ndarray:
    """k of ``ref`` against every row of ``others`` (shape (n, 3)).

    Degenerate pairs, where the denominator is below ``den_eps`` times the
    product of the two tracks' largest magnitudes, come back as NaN.
    """
    a = _xs(ref)
    b = np.atleast_2d(np.asarray(others, dtype=float))
    num = a[2] * b[:, 0] - a[0] * b[:, 2]
    den = a[1] * b[:, 0] - a[0] * b[:, 1]
    scale = np.abs(a).max() * np.abs(b).max(axis=1)
    ok = np.abs(den) > den_eps * scale
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(ok, num / np.where(ok, den, 1.0), np.nan)


def compute_k(track_a, track_b, den_eps: float = DEN_EPS) -> float:
    k = float(k_values(track_a, _xs(track_b)[None, :], den_eps)[0])
    if math.isnan(k):
        raise DegenerateTrackPair("k denominator vanishes for this track pair")
    return k


def _clamp_unit(value: float, eps: float, exc) -> float:
    if abs(value) > 1.0 + eps:
        raise exc(f"argument {value!r} outside [-1, 1]")
    return min(1.0, max(-1.0, value))


def solve_triplet(
    track_a, track_b, den_eps: float = DEN_EPS, domain_eps: float = DOMAIN_EPS
) -> AnglePair:
    """Recover ``(delta1, delta2)`` from two tracks.

    ``track_a`` supplies x in the cos(delta1) expression; k is symmetric in
    the pair, so when that denominator vanishes (e.g. x1 = 0) ``track_b``
    takes over.
    """
    k = compute_k(track_a, track_b, den_eps)
    a, b = _xs(track_a), _xs(track_b)
    for ref in (a, b):
        x1, x2, x3 = ref
        m = x3 - k * x2
        den = 2.0 * k * x1 * m
        if abs(den) > den_eps * max(x1 * x1, x2 * x2, x3 * x3):
            break
    else:
        raise DegenerateTrackPair("cos(delta1) denominator vanishes for both tracks")
    cos_d1 = _clamp_unit(((1.0 - k * k) * x1 * x1 - m * m) / den, domain_eps, ArccosDomain)
    d1 = math.acos(cos_d1)
    sin_total = _clamp_unit(k * math.sin(d1), domain_eps, ArcsinDomain)
    d2 = math.asin(sin_total) - d1
    if not (d1 > 0 and d2 > 0 and d1 + d2 < math.pi / 2):
        raise ConstraintViolated(
            f"delta1={math.degrees(d1):.6g} deg, delta2={math.degrees(d2):.6g} deg"
        )
    if _reflected_branch_fits_better(a, b, d1, d1 + d2):
        raise ConstraintViolated("third frame fits a total rotation above 90 deg better")
    return AnglePair(d1, d2, k)


def _reflected_branch_fits_better(a, b, d1: float, total: float) -> bool:
    """Compare third-frame reprojection for totals ``total`` and ``pi - total``.

    arcsin only returns totals below pi/2, so a true total T > pi/2 aliases
    to pi - T with identical k and delta1. Each track's cos/sin coefficients
    follow from frames 1 and 2; the branch that reprojects frame 3 better
    wins.
    """
    s1, c1 = math.sin(d1), math.cos(d1)
    ct, st = math.cos(total), math.sin(total)
    principal = reflected = 0.0
    for x1, x2, x3 in (a, b):
        cos_coef = x1
        sin_coef = (x2 - x1 * c1) / s1
        principal += (x3 - (cos_coef * ct + sin_coef * st)) ** 2
        reflected += (x3 - (-cos_coef * ct + sin_coef * st)) ** 2
    return reflected < principal


def forward_tracks(points, delta1: float, delta2: float, start: float = 0.0):
    """Noise-free tracks of ``(amplitude, phase)`` points at the three poses."""
    alphas = start + np.array([0.0, delta1, delta1 + delta2])
    out = []
    for n, (amp, phase) in enumerate(points):
        x = amp * np.cos(alphas + phase)
        out.append(TripletTrack(*map(float, x), track_id=n))
    return out
