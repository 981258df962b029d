"""Pose accuracy metrics: average model-point distance and detection rate.

The average distance (ADD) transforms the same model point by the ground
truth and the estimated pose and averages the per-point displacements.  A
pose counts as correct when the ADD is strictly below 10% of the model
diameter.  For objects with a known symmetry orbit a symmetric variant
takes the minimum over the orbit, since an orbit-equivalent estimate is
indistinguishable from the truth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptyResults
from .geometry import RigidTransform, Rotation3
from .symmetry import SymmetryGroup

CORRECTNESS_FRACTION = 0.1


@dataclass(frozen=True)
class ModelPoints:
    """Sampled model surface points; diameter is the max pairwise distance."""

    points: np.ndarray
    diameter: float

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 2:
            raise ValueError("need an (N, 3) array with N >= 2")
        actual = _max_pairwise_distance(pts)
        if abs(actual - self.diameter) > 1e-9:
            raise ValueError(
                f"declared diameter {self.diameter} != max pairwise distance {actual}"
            )
        pts = np.ascontiguousarray(pts)
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)


def _max_pairwise_distance(points: np.ndarray) -> float:
    diff = points[:, None, :] - points[None, :, :]
    return float(np.sqrt(np.max(np.einsum("ijk,ijk->ij", diff, diff))))


def sample_sphere_points(nominal_diameter: float, n: int = 512) -> ModelPoints:
    """Deterministic Fibonacci-lattice sample on a sphere surface.

    The reported diameter is the realized max pairwise distance, which is
    marginally below the nominal sphere diameter because the lattice has
    no exact antipodal pairs.
    """
    if nominal_diameter <= 0:
        raise ValueError("diameter must be positive")
    if n < 2:
        raise ValueError("need at least two points")
    radius = 0.5 * nominal_diameter
    golden = (1.0 + math.sqrt(5.0)) / 2.0
    idx = np.arange(n, dtype=float)
    z = 1.0 - 2.0 * (idx + 0.5) / n
    r_xy = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    phi = 2.0 * math.pi * idx / golden
    pts = radius * np.stack([r_xy * np.cos(phi), r_xy * np.sin(phi), z], axis=1)
    return ModelPoints(points=pts, diameter=_max_pairwise_distance(pts))


def add_metric(
    points: ModelPoints, pose_true: RigidTransform, pose_est: RigidTransform
) -> float:
    """Mean displacement of corresponding model points under the two poses."""
    a = pose_true.transform_point(points.points)
    b = pose_est.transform_point(points.points)
    return float(np.mean(np.linalg.norm(a - b, axis=1)))


def is_correct(add: float, diameter: float) -> bool:
    """Strictly below 10% of the diameter."""
    if diameter <= 0:
        raise ValueError("diameter must be positive")
    return add < CORRECTNESS_FRACTION * diameter


def add_symmetric(
    points: ModelPoints,
    group: SymmetryGroup,
    pose_true: RigidTransform,
    pose_est: RigidTransform,
) -> float:
    """ADD minimized over the symmetry orbit of the ground-truth rotation."""
    best = math.inf
    for g in group.elements:
        orbit_pose = RigidTransform(
            pose_true.rotation @ g, pose_true.translation
        )
        best = min(best, add_metric(points, orbit_pose, pose_est))
    return best


def detection_rate(results) -> float:
    """Fraction of (add, diameter) pairs passing the correctness rule."""
    results = list(results)
    if not results:
        raise EmptyResults("no results to aggregate")
    hits = sum(1 for add, diameter in results if is_correct(add, diameter))
    return hits / len(results)


def detection_rate_ci(
    results, n_bootstrap: int = 1000, seed: int = 0, level: float = 0.95
) -> tuple[float, float]:
    """Percentile bootstrap confidence interval for the detection rate."""
    results = list(results)
    if not results:
        raise EmptyResults("no results to aggregate")
    flags = np.array([is_correct(a, d) for a, d in results], dtype=float)
    rng = np.random.Generator(np.random.Philox(key=np.array([seed, 1], dtype=np.uint64)))
    draws = rng.integers(0, len(flags), size=(n_bootstrap, len(flags)))
    rates = flags[draws].mean(axis=1)
    lo = float(np.quantile(rates, (1.0 - level) / 2.0))
    hi = float(np.quantile(rates, 1.0 - (1.0 - level) / 2.0))
    return lo, hi
