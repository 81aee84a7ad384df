"""1D rotation factor graph solved as banded weighted linear least squares.

Every factor ``(i, j, u, sigma)`` contributes the residual
``(theta_j - theta_i - u) / sigma``; the prior contributes
``(theta_node - value) / sigma``. Residuals are linear in theta, so the MAP
estimate is one Cholesky solve of the normal equations. The normal matrix
is banded with bandwidth equal to the longest factor span.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy import linalg
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import breadth_first_order

from .errors import CholeskyFailure, DataFormatError, DisconnectedGraph, MissingPrior

PRIOR_SIGMA = 1e-6
FULL_TURN = 2 * math.pi


@dataclass(frozen=True)
class Factor:
    i: int
    j: int
    u: float
    sigma: float


@dataclass(frozen=True)
class Prior:
    node: int
    value: float
    sigma: float = PRIOR_SIGMA


@dataclass
class RotationGraph:
    node_count: int
    enc_factors: list[Factor] = field(default_factory=list)
    cv_factors: list[Factor] = field(default_factory=list)
    prior: Prior | None = None

    def _check(self, i: int, j: int, sigma: float):
        for n in (i, j):
            if not 0 <= n < self.node_count:
                raise IndexError(f"node {n} outside [0, {self.node_count})")
        if i == j:
            raise ValueError("a factor must link two distinct nodes")
        if not sigma > 0:
            raise ValueError(f"sigma must be > 0, got {sigma}")

    def add_enc(self, i: int, j: int, u: float, sigma: float) -> None:
        self._check(i, j, sigma)
        self.enc_factors.append(Factor(i, j, float(u), float(sigma)))

    def add_cv(self, i: int, j: int, u: float, sigma: float) -> None:
        self._check(i, j, sigma)
        self.cv_factors.append(Factor(i, j, float(u), float(sigma)))

    def set_prior(self, node: int, value: float, sigma: float = PRIOR_SIGMA) -> None:
        if not 0 <= node < self.node_count:
            raise IndexError(f"prior node {node} outside [0, {self.node_count})")
        if not sigma > 0:
            raise ValueError("prior sigma must be > 0")
        self.prior = Prior(node, float(value), float(sigma))

    @property
    def factors(self) -> list[Factor]:
        return self.enc_factors + self.cv_factors

    def arrays(self):
        """Factor endpoints, measurements and weights as numpy arrays."""
        fs = self.factors
        i = np.fromiter((f.i for f in fs), dtype=np.int64, count=len(fs))
        j = np.fromiter((f.j for f in fs), dtype=np.int64, count=len(fs))
        u = np.fromiter((f.u for f in fs), dtype=float, count=len(fs))
        w = 1.0 / np.fromiter((f.sigma for f in fs), dtype=float, count=len(fs))
        return i, j, u, w

    @property
    def bandwidth(self) -> int:
        return max((abs(f.j - f.i) for f in self.factors), default=0)


@dataclass
class NormalSystem:
    """Normal equations in LAPACK lower band storage: ``band[d, c] = N[c + d, c]``."""

    band: np.ndarray
    rhs: np.ndarray

    @property
    def bandwidth(self) -> int:
        return self.band.shape[0] - 1

    def to_dense(self) -> np.ndarray:
        n = self.band.shape[1]
        mat = np.zeros((n, n))
        for d in range(self.band.shape[0]):
            idx = np.arange(n - d)
            mat[idx + d, idx] = self.band[d, : n - d]
            mat[idx, idx + d] = self.band[d, : n - d]
        return mat


@dataclass
class RefinedTrajectory:
    angles: np.ndarray
    weighted_sse: float
    solve_time: float


def dead_reckoning_graph(increments, sigma_enc: float, start: float = 0.0,
                         prior_sigma: float = PRIOR_SIGMA) -> RotationGraph:
    """Chain of Enc factors over commanded increments with node 0 anchored."""
    g = RotationGraph(len(increments) + 1)
    for n, u in enumerate(increments):
        g.add_enc(n, n + 1, u, sigma_enc)
    g.set_prior(0, start, prior_sigma)
    return g


def initial_guess(graph: RotationGraph) -> np.ndarray:
    """Angles propagated from the prior along a breadth-first spanning tree.

    Raises DisconnectedGraph for the first node the tree cannot reach.
    """
    if graph.prior is None:
        raise MissingPrior("graph has no prior; the solution is not unique")
    i, j, u, _ = graph.arrays()
    n = graph.node_count
    adj = coo_matrix((np.ones(len(i)), (i, j)), shape=(n, n)).tocsr()
    order, pred = breadth_first_order(
        adj, graph.prior.node, directed=False, return_predecessors=True
    )
    if len(order) < n:
        reached = np.zeros(n, dtype=bool)
        reached[order] = True
        raise DisconnectedGraph(int(np.flatnonzero(~reached)[0]))
    # the first factor per ordered node pair wins (Enc factors come first)
    step = {}
    for e in range(len(i) - 1, -1, -1):
        step[(int(i[e]), int(j[e]))] = float(u[e])
    theta = np.zeros(n)
    theta[graph.prior.node] = graph.prior.value
    for node in order[1:]:
        parent = int(pred[node])
        if (parent, int(node)) in step:
            theta[node] = theta[parent] + step[(parent, int(node))]
        else:
            theta[node] = theta[parent] - step[(int(node), parent)]
    return theta


def _assemble(graph: RotationGraph, at: np.ndarray | None = None) -> NormalSystem:
    i, j, u, w = graph.arrays()
    n = graph.node_count
    lo, hi = np.minimum(i, j), np.maximum(i, j)
    w2 = w * w
    band = np.zeros((graph.bandwidth + 1, n))
    np.add.at(band[0], i, w2)
    np.add.at(band[0], j, w2)
    np.add.at(band, (hi - lo, lo), -w2)
    p = graph.prior
    if at is None:
        resid, prior_resid = u, p.value
    else:
        resid = u - (at[j] - at[i])
        prior_resid = p.value - at[p.node]
    rhs = np.zeros(n)
    np.add.at(rhs, j, w2 * resid)
    np.add.at(rhs, i, -w2 * resid)
    wp2 = 1.0 / (p.sigma * p.sigma)
    band[0, p.node] += wp2
    rhs[p.node] += wp2 * prior_resid
    return NormalSystem(band, rhs)


def build_normal_system(graph: RotationGraph) -> NormalSystem:
    """Assemble ``A^T A`` and ``A^T b`` of the whitened stacked system."""
    initial_guess(graph)  # validates prior and connectivity
    return _assemble(graph)


def weighted_sse(graph: RotationGraph, angles) -> float:
    """Objective: sum of squared whitened residuals including the prior."""
    angles = np.asarray(angles, dtype=float)
    if angles.shape != (graph.node_count,):
        raise ValueError(f"expected {graph.node_count} angles, got {angles.shape}")
    i, j, u, w = graph.arrays()
    r = (angles[j] - angles[i] - u) * w
    total = float(np.dot(r, r))
    if graph.prior is not None:
        p = graph.prior
        total += ((angles[p.node] - p.value) / p.sigma) ** 2
    return total


def solve(graph: RotationGraph) -> RefinedTrajectory:
    """Minimise the weighted SSE with one banded Cholesky solve.

    The system is solved for the correction to a spanning-tree initial
    guess, so round-off scales with the residuals rather than the angles.
    """
    t0 = time.perf_counter()
    theta0 = initial_guess(graph)
    system = _assemble(graph, at=theta0)
    try:
        factor = linalg.cholesky_banded(system.band, lower=True, check_finite=False)
    except linalg.LinAlgError as exc:
        raise CholeskyFailure(str(exc)) from None
    delta = linalg.cho_solve_banded((factor, True), system.rhs, check_finite=False)
    angles = theta0 + delta
    elapsed = time.perf_counter() - t0
    return RefinedTrajectory(angles, weighted_sse(graph, angles), elapsed)


def attach_cv_factors(
    graph: RotationGraph,
    run_frames: int,
    estimates: Mapping[int, float],
    step_frames: int,
    sigma_cv: float,
    tiling: str = "dense",
    wrap: bool = False,
) -> RotationGraph:
    """Add CV factors ``start -> start + step`` for every available estimate.

    ``estimates`` maps span start frame to the estimated rotation over the
    span; missing or NaN entries (failed estimates) are skipped. ``tiling``
    selects every window (``"dense"``) or non-overlapping windows
    (``"disjoint"``). With ``wrap`` spans may cross the end of the scan and
    close the loop over a full turn, which assumes the frames cover exactly
    one revolution.
    """
    if step_frames < 1:
        raise ValueError("step_frames must be >= 1")
    if run_frames > graph.node_count:
        raise ValueError("run_frames exceeds node count")
    if tiling not in ("dense", "disjoint"):
        raise ValueError(f"unknown tiling {tiling!r}")
    stride = step_frames if tiling == "disjoint" else 1
    for start in sorted(estimates):
        u = estimates[start]
        if u is None or not math.isfinite(u):
            continue
        if not 0 <= start < run_frames:
            raise IndexError(f"span start {start} outside [0, {run_frames})")
        if start % stride:
            continue
        end = start + step_frames
        if end < run_frames:
            graph.add_cv(start, end, u, sigma_cv)
        elif wrap:
            graph.add_cv(start, end - run_frames, u - FULL_TURN, sigma_cv)
        else:
            raise IndexError(f"span {start}->{end} exceeds {run_frames} frames")
    return graph


def dumps(graph: RotationGraph) -> str:
    lines = [f"# rotation graph, {graph.node_count} nodes"]
    if graph.prior is not None:
        p = graph.prior
        lines.append(f"PRIOR {p.node} {p.value!r} {p.sigma!r}")
    lines += [f"ENC {f.i} {f.j} {f.u!r} {f.sigma!r}" for f in graph.enc_factors]
    lines += [f"CV {f.i} {f.j} {f.u!r} {f.sigma!r}" for f in graph.cv_factors]
    return "\n".join(lines) + "\n"


def loads(text: str, node_count: int | None = None) -> RotationGraph:
    """Parse the ``PRIOR`` / ``ENC`` / ``CV`` line format.

    The node count defaults to one past the largest referenced node.
    """
    records = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        kind = parts[0].upper()
        try:
            if kind == "PRIOR" and len(parts) == 4:
                records.append((kind, int(parts[1]), None, float(parts[2]), float(parts[3])))
            elif kind in ("ENC", "CV") and len(parts) == 5:
                records.append((kind, int(parts[1]), int(parts[2]), float(parts[3]), float(parts[4])))
            else:
                raise ValueError(f"cannot parse {raw!r}")
        except ValueError as exc:
            raise DataFormatError(str(exc), line=lineno) from None
    if node_count is None:
        nodes = [r[1] for r in records] + [r[2] for r in records if r[2] is not None]
        node_count = max(nodes, default=-1) + 1
    graph = RotationGraph(node_count)
    for kind, a, b, value, sigma in records:
        try:
            if kind == "PRIOR":
                graph.set_prior(a, value, sigma)
            elif kind == "ENC":
                graph.add_enc(a, b, value, sigma)
            else:
                graph.add_cv(a, b, value, sigma)
        except (ValueError, IndexError) as exc:
            raise DataFormatError(str(exc)) from None
    return graph
