"""Multi-view translation estimation from 2D object-center observations.

Each view contributes a 2D residual between the projected world-frame
object center and the detected center pixel.  The stacked residuals are
minimized by iteratively reweighted Gauss-Newton with a Huber loss on the
Mahalanobis norm, which keeps single large outliers from dragging the
estimate.  The depth is initialized from the bounding-box diagonal of the
first detection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateBox, Diverged, NonPositiveDepth, Underdetermined
from .geometry import CameraIntrinsics, RigidTransform, backproject, project

# Huber knee on the Mahalanobis norm: sqrt of the chi-square 95% quantile
# for 2 degrees of freedom.
HUBER_DELTA = 2.447

SIGMA_MIN_EIGENVALUE = 1e-12


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned 2D box in pixels."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if self.x_max < self.x_min or self.y_max < self.y_min:
            raise ValueError("bounding box has negative extent")

    @property
    def center(self) -> np.ndarray:
        return np.array([0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max)])

    @property
    def diagonal(self) -> float:
        return math.hypot(self.x_max - self.x_min, self.y_max - self.y_min)

    def contains(self, pixel: np.ndarray, inflate: float = 0.0) -> bool:
        dx = inflate * (self.x_max - self.x_min)
        dy = inflate * (self.y_max - self.y_min)
        return (
            self.x_min - dx <= pixel[0] <= self.x_max + dx
            and self.y_min - dy <= pixel[1] <= self.y_max + dy
        )


@dataclass(frozen=True)
class CenterMeasurement:
    """One view's observation of the object center.

    ``camera_pose`` maps camera-frame points to world frame.  ``sigma`` is
    the 2x2 pixel covariance reported by the detector and must be
    symmetric positive-definite.
    """

    frame_id: int
    pixel: np.ndarray
    sigma: np.ndarray
    camera_pose: RigidTransform
    intrinsics: CameraIntrinsics

    def __post_init__(self):
        pixel = np.asarray(self.pixel, dtype=float).reshape(2)
        sigma = np.asarray(self.sigma, dtype=float).reshape(2, 2)
        if not np.all(np.isfinite(pixel)):
            raise ValueError("center pixel must be finite")
        if not np.allclose(sigma, sigma.T, atol=1e-9):
            raise ValueError("sigma must be symmetric")
        if np.min(np.linalg.eigvalsh(sigma)) <= SIGMA_MIN_EIGENVALUE:
            raise ValueError("sigma must be positive-definite")
        pixel.flags.writeable = False
        sigma.flags.writeable = False
        object.__setattr__(self, "pixel", pixel)
        object.__setattr__(self, "sigma", sigma)


@dataclass
class TranslationState:
    """Solver output: estimate, information matrix and diagnostics."""

    t_wo: np.ndarray
    info_matrix: np.ndarray
    n_measurements: int
    converged: bool
    final_cost: float
    iterations: int = 0
    skipped_frames: tuple = ()


@dataclass
class SolverOptions:
    huber_delta: float = HUBER_DELTA
    max_iterations: int = 50
    step_tolerance: float = 1e-9
    max_halvings: int = 8
    divergence_patience: int = 5
    condition_limit: float = 1e8


def init_from_bbox(
    bbox: BoundingBox,
    intrinsics: CameraIntrinsics,
    camera_pose: RigidTransform,
    model_diameter: float,
) -> np.ndarray:
    """Depth-from-apparent-size initial guess, in world frame.

    The bounding-box diagonal approximates the projected model diameter,
    so depth ~= f_mean * diameter / diagonal.
    """
    if model_diameter <= 0:
        raise ValueError("model diameter must be positive")
    diag = bbox.diagonal
    if diag < 1.0:
        raise DegenerateBox(f"bbox diagonal {diag:.3g} px is below 1 px")
    depth = intrinsics.mean_focal * model_diameter / diag
    t_co = backproject(intrinsics, bbox.center, depth)
    return camera_pose.transform_point(t_co)


def center_residual(t_wo: np.ndarray, meas: CenterMeasurement) -> np.ndarray:
    """Reprojection residual: projected center minus detected center."""
    p_cam = meas.camera_pose.inverse().transform_point(t_wo)
    return project(meas.intrinsics, p_cam) - meas.pixel


def center_jacobian(t_wo: np.ndarray, meas: CenterMeasurement) -> np.ndarray:
    """2x3 Jacobian of the residual with respect to t_wo."""
    pose_inv = meas.camera_pose.inverse()
    p = pose_inv.transform_point(t_wo)
    if p[2] <= 1e-9:
        raise NonPositiveDepth("cannot linearize behind the camera")
    fx, fy = meas.intrinsics.fx, meas.intrinsics.fy
    x, y, z = p
    d_proj = np.array([[fx / z, 0.0, -fx * x / z**2], [0.0, fy / z, -fy * y / z**2]])
    return d_proj @ pose_inv.rotation.matrix


class _MeasurementStack:
    """Vectorized residual/Jacobian evaluation across all views."""

    def __init__(self, measurements: list[CenterMeasurement]):
        self.frame_ids = [m.frame_id for m in measurements]
        self.rot_cw = np.stack([m.camera_pose.rotation.matrix.T for m in measurements])
        self.t_wc = np.stack([m.camera_pose.translation for m in measurements])
        self.pixels = np.stack([m.pixel for m in measurements])
        self.sigma_inv = np.stack([np.linalg.inv(m.sigma) for m in measurements])
        self.fx = np.array([m.intrinsics.fx for m in measurements])
        self.fy = np.array([m.intrinsics.fy for m in measurements])
        self.cx = np.array([m.intrinsics.cx for m in measurements])
        self.cy = np.array([m.intrinsics.cy for m in measurements])

    def evaluate(self, t_wo: np.ndarray):
        """Residuals (n, 2), Jacobians (n, 2, 3) and the in-front mask."""
        p_cam = np.einsum("nij,nj->ni", self.rot_cw, t_wo[None, :] - self.t_wc)
        valid = p_cam[:, 2] > 1e-9
        z = np.where(valid, p_cam[:, 2], 1.0)
        res = np.stack(
            [
                self.fx * p_cam[:, 0] / z + self.cx - self.pixels[:, 0],
                self.fy * p_cam[:, 1] / z + self.cy - self.pixels[:, 1],
            ],
            axis=1,
        )
        d_proj = np.zeros((len(z), 2, 3))
        d_proj[:, 0, 0] = self.fx / z
        d_proj[:, 0, 2] = -self.fx * p_cam[:, 0] / z**2
        d_proj[:, 1, 1] = self.fy / z
        d_proj[:, 1, 2] = -self.fy * p_cam[:, 1] / z**2
        jac = np.einsum("nij,njk->nik", d_proj, self.rot_cw)
        return res, jac, valid


def _huber_cost_and_weights(res, sigma_inv, valid, delta):
    """Robust cost plus per-view IRLS weights.

    The loss is quadratic in the Mahalanobis norm s up to the knee and
    linear beyond it: rho(s) = s^2 for s <= delta, 2*delta*s - delta^2
    otherwise, giving weight min(1, delta / s).
    """
    sq = np.einsum("ni,nij,nj->n", res, sigma_inv, res)
    sq = np.maximum(sq, 0.0)
    s = np.sqrt(sq)
    weights = np.where(s > delta, delta / np.maximum(s, 1e-300), 1.0)
    cost_terms = np.where(s > delta, 2.0 * delta * s - delta**2, sq)
    cost = float(np.sum(np.where(valid, cost_terms, 0.0)))
    return cost, np.where(valid, weights, 0.0)


def solve(
    measurements: list[CenterMeasurement],
    init: np.ndarray,
    options: SolverOptions | None = None,
) -> TranslationState:
    """Huber-weighted Gauss-Newton fit of the world-frame translation.

    Needs at least two views with nonzero baseline.  Views that fall
    behind the camera at the current linearization point are skipped for
    that iteration and reported in ``skipped_frames``.
    """
    opts = options or SolverOptions()
    if len(measurements) < 2:
        raise Underdetermined("translation needs at least two views")

    stack = _MeasurementStack(measurements)
    t = np.asarray(init, dtype=float).copy()

    res, jac, valid = stack.evaluate(t)
    if not np.any(valid):
        raise Underdetermined("all views see the point behind the camera")
    cost, weights = _huber_cost_and_weights(res, stack.sigma_inv, valid, opts.huber_delta)

    increase_streak = 0
    converged = False
    iterations = 0
    info = np.zeros((3, 3))

    for iterations in range(1, opts.max_iterations + 1):
        w_sigma_inv = weights[:, None, None] * stack.sigma_inv
        info = np.einsum("nij,nik,nkl->jl", jac, w_sigma_inv, jac)
        grad = np.einsum("nij,nik,nk->j", jac, w_sigma_inv, res)

        cond = _condition_number(info)
        if cond > opts.condition_limit:
            raise Underdetermined(
                f"normal matrix condition number {cond:.3g} exceeds "
                f"{opts.condition_limit:.3g} (near-zero baseline?)"
            )
        step = -np.linalg.solve(info, grad)

        # Backtrack until the robust cost stops increasing.
        scale = 1.0
        for _ in range(opts.max_halvings + 1):
            trial = t + scale * step
            res_trial, jac_trial, valid_trial = stack.evaluate(trial)
            cost_trial, weights_trial = _huber_cost_and_weights(
                res_trial, stack.sigma_inv, valid_trial, opts.huber_delta
            )
            if cost_trial <= cost or not np.any(valid_trial):
                break
            scale *= 0.5

        if cost_trial > cost:
            increase_streak += 1
            if increase_streak >= opts.divergence_patience:
                raise Diverged(
                    f"cost increased {increase_streak} consecutive iterations"
                )
        else:
            increase_streak = 0

        t = t + scale * step
        res, jac, valid, cost, weights = res_trial, jac_trial, valid_trial, cost_trial, weights_trial

        if np.linalg.norm(scale * step) < opts.step_tolerance:
            converged = True
            break

    # Final linearization for the information matrix.
    w_sigma_inv = weights[:, None, None] * stack.sigma_inv
    info = np.einsum("nij,nik,nkl->jl", jac, w_sigma_inv, jac)
    skipped = tuple(
        fid for fid, ok in zip(stack.frame_ids, valid) if not ok
    )
    return TranslationState(
        t_wo=t,
        info_matrix=info,
        n_measurements=len(measurements),
        converged=converged,
        final_cost=cost,
        iterations=iterations,
        skipped_frames=skipped,
    )


def _condition_number(info: np.ndarray) -> float:
    eigvals = np.linalg.eigvalsh(info)
    smallest = max(eigvals[0], 0.0)
    if smallest <= 0.0:
        return math.inf
    return float(eigvals[-1] / smallest)


@dataclass
class TranslationEstimator:
    """Per-object accumulator: re-solves on every new view, warm-started.

    With three unknowns a full re-solve is cheap, so no marginalization is
    kept.  Below two views the state simply holds the bbox-derived guess.
    """

    init_guess: np.ndarray
    options: SolverOptions = field(default_factory=SolverOptions)
    measurements: list[CenterMeasurement] = field(default_factory=list)
    state: TranslationState = None

    def __post_init__(self):
        self.init_guess = np.asarray(self.init_guess, dtype=float).reshape(3)
        if self.state is None:
            self.state = TranslationState(
                t_wo=self.init_guess.copy(),
                info_matrix=np.zeros((3, 3)),
                n_measurements=0,
                converged=False,
                final_cost=math.inf,
            )

    def add_measurement(self, meas: CenterMeasurement) -> TranslationState:
        self.measurements.append(meas)
        if len(self.measurements) < 2:
            self.state = TranslationState(
                t_wo=self.init_guess.copy(),
                info_matrix=np.zeros((3, 3)),
                n_measurements=len(self.measurements),
                converged=False,
                final_cost=math.inf,
            )
            return self.state
        warm_start = self.state.t_wo if self.state.converged else self.init_guess
        self.state = solve(self.measurements, warm_start, self.options)
        return self.state
