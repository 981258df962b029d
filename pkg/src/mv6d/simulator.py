"""Deterministic synthetic measurement generation.

Stands in for the detector / template-matcher front end: given a scene of
objects with known poses and a camera rig, it emits per-frame center and
rotation measurements with configurable Gaussian noise, uniform outliers,
symmetry aliasing and spurious rotation modes.

Randomness comes from counter-based Philox streams so sessions are
bit-reproducible and independent of evaluation order: the stream for a
draw is keyed by the session seed with counter (frame, object, channel).
Channel 0 is the center measurement, channel 1 the rotation measurement.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ProjectionOutOfImage
from .geometry import CameraIntrinsics, RigidTransform, Rotation3, exp_so3, project
from .symmetry import SymmetryGroup
from .tracker import BoundingBox, Detection, FrameInput
from .translation import CenterMeasurement
from .rotation import RotationMeasurement

CENTER_CHANNEL = 0
ROTATION_CHANNEL = 1

OUTLIER_HALF_WIDTH_PX = 100.0
SIGMA_FLOOR = 1e-4
CONFIDENCE_MIN = 0.05
SPURIOUS_CONFIDENCE_PENALTY = 0.5


@dataclass(frozen=True)
class SimObject:
    label: str
    pose: RigidTransform
    diameter: float
    symmetry: SymmetryGroup
    n_model_points: int = 512

    def __post_init__(self):
        if self.diameter <= 0:
            raise ValueError("object diameter must be positive")
        if self.n_model_points < 2:
            raise ValueError("need at least two model points")


@dataclass(frozen=True)
class SceneSpec:
    objects: tuple
    workspace_center: np.ndarray
    workspace_half_extent: float

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))
        center = np.asarray(self.workspace_center, dtype=float).reshape(3)
        object.__setattr__(self, "workspace_center", center)
        for obj in self.objects:
            offset = np.abs(obj.pose.translation - center)
            if np.any(offset > self.workspace_half_extent):
                raise ValueError(f"object {obj.label} lies outside the workspace")


@dataclass(frozen=True)
class CameraRig:
    intrinsics: CameraIntrinsics
    viewpoints: tuple  # camera-to-world poses, all oriented at the workspace

    def __post_init__(self):
        object.__setattr__(self, "viewpoints", tuple(self.viewpoints))


@dataclass(frozen=True)
class NoiseModel:
    center_sigma_px: float = 0.0
    center_outlier_rate: float = 0.0
    rotation_sigma_deg: float = 0.0
    spurious_mode_rate: float = 0.0
    symmetry_aliasing: bool = False
    confidence_base: float = 0.9
    confidence_noise_penalty: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("center_outlier_rate", "spurious_mode_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        if self.center_sigma_px < 0 or self.rotation_sigma_deg < 0:
            raise ValueError("noise sigmas must be non-negative")


def look_at(eye: np.ndarray, target: np.ndarray) -> RigidTransform:
    """Camera-to-world pose with +z pointing from eye to target.

    Uses the x-right / y-down image convention; world +z is 'up' unless
    the view direction is (anti)parallel to it.
    """
    eye = np.asarray(eye, dtype=float)
    target = np.asarray(target, dtype=float)
    forward = target - eye
    norm = np.linalg.norm(forward)
    if norm < 1e-12:
        raise ValueError("camera eye coincides with the target")
    forward = forward / norm
    up = np.array([0.0, 0.0, 1.0])
    if abs(forward @ up) > 1.0 - 1e-9:
        up = np.array([0.0, 1.0, 0.0])
    right = np.cross(forward, up)
    right = right / np.linalg.norm(right)
    down = np.cross(forward, right)
    rot = np.column_stack([right, down, forward])
    return RigidTransform(Rotation3(rot), eye)


def make_ring_rig(
    intrinsics: CameraIntrinsics,
    center: np.ndarray,
    radius: float,
    n_views: int,
    height: float = 0.0,
) -> CameraRig:
    """Cameras on a horizontal circle about the workspace center."""
    center = np.asarray(center, dtype=float)
    views = []
    for k in range(n_views):
        angle = 2.0 * math.pi * k / n_views
        eye = center + np.array(
            [radius * math.cos(angle), radius * math.sin(angle), height]
        )
        views.append(look_at(eye, center))
    return CameraRig(intrinsics, views)


def make_sphere_rig(
    intrinsics: CameraIntrinsics, center: np.ndarray, radius: float, n_views: int
) -> CameraRig:
    """Cameras on a Fibonacci-spaced upper hemisphere."""
    center = np.asarray(center, dtype=float)
    golden = (1.0 + math.sqrt(5.0)) / 2.0
    views = []
    for k in range(n_views):
        z = (k + 0.5) / n_views  # upper hemisphere only
        r_xy = math.sqrt(max(0.0, 1.0 - z * z))
        phi = 2.0 * math.pi * k / golden
        direction = np.array([r_xy * math.cos(phi), r_xy * math.sin(phi), z])
        views.append(look_at(center + radius * direction, center))
    return CameraRig(intrinsics, views)


def measurement_rng(seed: int, frame: int, obj: int, channel: int) -> np.random.Generator:
    """Philox stream for one (frame, object, channel) draw site."""
    bitgen = np.random.Philox(
        key=np.array([seed & 0xFFFFFFFFFFFFFFFF, 0], dtype=np.uint64),
        counter=np.array([frame, obj, channel, 0], dtype=np.uint64),
    )
    return np.random.Generator(bitgen)


def simulate_center(
    true_center: np.ndarray,
    noise: NoiseModel,
    rng: np.random.Generator,
    frame_id: int,
    camera_pose: RigidTransform,
    intrinsics: CameraIntrinsics,
) -> CenterMeasurement:
    """Noisy center observation; outliers land anywhere in a 200 px box.

    The reported covariance is always the configured inlier sigma (with a
    small floor), so the estimator has to survive unreported outliers.
    All random draws happen unconditionally to keep streams aligned
    across noise configurations.
    """
    outlier_draw = rng.uniform()
    uniform_offset = rng.uniform(-OUTLIER_HALF_WIDTH_PX, OUTLIER_HALF_WIDTH_PX, 2)
    gauss_offset = rng.standard_normal(2)
    if outlier_draw < noise.center_outlier_rate:
        pixel = true_center + uniform_offset
    else:
        pixel = true_center + noise.center_sigma_px * gauss_offset
    variance = max(noise.center_sigma_px**2, SIGMA_FLOOR)
    return CenterMeasurement(
        frame_id=frame_id,
        pixel=pixel,
        sigma=variance * np.eye(2),
        camera_pose=camera_pose,
        intrinsics=intrinsics,
    )


def random_rotation(rng: np.random.Generator) -> Rotation3:
    """Uniform rotation from a normalized Gaussian quaternion."""
    q = rng.standard_normal(4)
    q = q / np.linalg.norm(q)
    w, x, y, z = q
    return Rotation3(
        np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
                [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
                [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
            ]
        )
    )


def simulate_rotation(
    true_camera_from_object: Rotation3,
    group: SymmetryGroup,
    noise: NoiseModel,
    rng: np.random.Generator,
    frame_id: int,
    world_from_camera: Rotation3,
) -> RotationMeasurement:
    """Rotation hypothesis as a template matcher would report it.

    With aliasing enabled the true rotation is replaced by a uniformly
    random orbit member first (a matcher cannot tell them apart), then
    perturbed in the tangent space; with probability spurious_mode_rate
    the result is a uniformly random rotation instead.  Confidence decays
    linearly with the perturbation magnitude and drops hard for spurious
    draws.
    """
    alias_index = int(rng.integers(len(group)))
    eps = rng.standard_normal(3) * math.radians(noise.rotation_sigma_deg)
    spurious_draw = rng.uniform()
    spurious_rotation = random_rotation(rng)

    measured = true_camera_from_object
    if noise.symmetry_aliasing:
        measured = measured @ group.elements[alias_index]
    measured = exp_so3(eps) @ measured

    spurious = spurious_draw < noise.spurious_mode_rate
    if spurious:
        measured = spurious_rotation

    confidence = noise.confidence_base - noise.confidence_noise_penalty * float(
        np.linalg.norm(eps)
    )
    if spurious:
        confidence -= SPURIOUS_CONFIDENCE_PENALTY
    confidence = min(1.0, max(CONFIDENCE_MIN, confidence))

    return RotationMeasurement(
        frame_id=frame_id,
        camera_from_object=measured,
        confidence=confidence,
        world_from_camera=world_from_camera,
    )


@dataclass(frozen=True)
class GroundTruthObject:
    label: str
    pose: RigidTransform
    diameter: float
    symmetry: SymmetryGroup


@dataclass(frozen=True)
class GroundTruthRecord:
    objects: tuple

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))


def validate_rig(spec: SceneSpec, rig: CameraRig) -> None:
    """Every object center must project inside every view."""
    for k, pose in enumerate(rig.viewpoints):
        inv = pose.inverse()
        for obj in spec.objects:
            p_cam = inv.transform_point(obj.pose.translation)
            if p_cam[2] <= 1e-9:
                raise ProjectionOutOfImage(
                    f"object {obj.label} behind camera in view {k}"
                )
            u = project(rig.intrinsics, p_cam)
            if not (
                0 <= u[0] < rig.intrinsics.width and 0 <= u[1] < rig.intrinsics.height
            ):
                raise ProjectionOutOfImage(
                    f"object {obj.label} projects outside view {k}: {u}"
                )


def generate_session(
    spec: SceneSpec, rig: CameraRig, noise: NoiseModel
) -> tuple[list[FrameInput], GroundTruthRecord]:
    """One detection per object per viewpoint, fully seeded.

    The bounding box is a square centered on the measured pixel whose
    diagonal equals the projected model diameter, matching the heuristic
    the depth initializer inverts.
    """
    validate_rig(spec, rig)
    frames = []
    for k, camera_pose in enumerate(rig.viewpoints):
        inv = camera_pose.inverse()
        detections = []
        for j, obj in enumerate(spec.objects):
            p_cam = inv.transform_point(obj.pose.translation)
            true_center = project(rig.intrinsics, p_cam)
            center = simulate_center(
                true_center,
                noise,
                measurement_rng(noise.seed, k, j, CENTER_CHANNEL),
                frame_id=k,
                camera_pose=camera_pose,
                intrinsics=rig.intrinsics,
            )
            true_cam_from_obj = inv.rotation @ obj.pose.rotation
            rot = simulate_rotation(
                true_cam_from_obj,
                obj.symmetry,
                noise,
                measurement_rng(noise.seed, k, j, ROTATION_CHANNEL),
                frame_id=k,
                world_from_camera=camera_pose.rotation,
            )
            diag = rig.intrinsics.mean_focal * obj.diameter / p_cam[2]
            half_side = diag / (2.0 * math.sqrt(2.0))
            bbox = BoundingBox(
                x_min=center.pixel[0] - half_side,
                y_min=center.pixel[1] - half_side,
                x_max=center.pixel[0] + half_side,
                y_max=center.pixel[1] + half_side,
            )
            detections.append(
                Detection(bbox=bbox, center=center, rotation=rot, label=obj.label)
            )
        frames.append(
            FrameInput(
                frame_id=k,
                camera_pose=camera_pose,
                intrinsics=rig.intrinsics,
                detections=detections,
            )
        )
    truth = GroundTruthRecord(
        objects=[
            GroundTruthObject(
                label=o.label, pose=o.pose, diameter=o.diameter, symmetry=o.symmetry
            )
            for o in spec.objects
        ]
    )
    return frames, truth
