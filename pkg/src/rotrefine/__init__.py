"""Rotation angle refinement for rotational CT scans.

Relative angles between projection triplets are estimated from tracked
points in closed form, robustified with RANSAC, and fused with stepper-motor
increments in a 1D factor graph solved by banded Cholesky.
"""

__version__ = "0.1.0"

from .errors import (  # noqa: F401
    ArccosDomain,
    ArcsinDomain,
    CholeskyFailure,
    ConstraintViolated,
    DegenerateTrackPair,
    DisconnectedGraph,
    InsufficientTracks,
    MissingPrior,
    NoValidPair,
    RotRefineError,
)
from .graph import RotationGraph, attach_cv_factors, build_normal_system, solve, weighted_sse  # noqa: F401
from .projection import ScenePoint, TrajectorySpec, make_scene, project, simulate_trajectory  # noqa: F401
from .ransac import RansacConfig, estimate_angles, iteration_count  # noqa: F401
from .tracks import TripletTrack, build_triplet_tracks, load_keypoints, match_mutual_nn  # noqa: F401
from .triplet import AnglePair, compute_k, solve_triplet  # noqa: F401
