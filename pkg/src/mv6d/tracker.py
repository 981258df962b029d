"""Per-frame orchestration of the two-step pose pipeline.

Detections are associated to tracked objects first, each matched object's
translation is re-solved, and only once an object's translation has
converged are its rotation measurements fused (rotation measurements that
arrive earlier are buffered and replayed).  Association uses a
reprojection gate for objects with a converged translation and an
epipolar-line gate for objects that so far have a single observation and
therefore no depth.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NotReady
from .geometry import (
    CameraIntrinsics,
    RigidTransform,
    Rotation3,
    project,
    roi_side,
    skew,
)
from .rotation import (
    RotationMeasurement,
    RotationMixtureState,
    RotationParams,
    ingest,
    map_estimate,
)
from .symmetry import SymmetryGroup
from .translation import (
    BoundingBox,
    CenterMeasurement,
    SolverOptions,
    TranslationEstimator,
    init_from_bbox,
)

STATE_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class Detection:
    """One detector output: box, center observation, optional rotation.

    ``label`` carries the detector's object class when available; matching
    is restricted to equal labels (None matches anything).
    """

    bbox: BoundingBox
    center: CenterMeasurement
    rotation: RotationMeasurement | None = None
    label: str | None = None

    def __post_init__(self):
        if not self.bbox.contains(self.center.pixel, inflate=0.2):
            raise ValueError("center pixel outside the inflated bounding box")


@dataclass(frozen=True)
class FrameInput:
    frame_id: int
    camera_pose: RigidTransform
    intrinsics: CameraIntrinsics
    detections: tuple

    def __post_init__(self):
        object.__setattr__(self, "detections", tuple(self.detections))


@dataclass(frozen=True)
class ObjectModel:
    """Prior knowledge attached to new tracks of a given class."""

    label: str | None
    diameter: float
    symmetry: SymmetryGroup


@dataclass
class TrackerConfig:
    gate_px: float = 30.0
    roi_reference_side_px: float = 128.0
    roi_reference_depth: float = 1.0
    translation: SolverOptions = field(default_factory=SolverOptions)
    rotation: RotationParams = field(default_factory=RotationParams)


@dataclass
class TrackedObject:
    """One object hypothesis with its two estimator states."""

    id: int
    label: str | None
    model_diameter: float
    symmetry: SymmetryGroup
    translation: TranslationEstimator
    rotation: RotationMixtureState
    frames_seen: int = 0
    pending_rotations: list = field(default_factory=list)
    roi_history: list = field(default_factory=list)
    weight_history: list = field(default_factory=list)
    last_error: str | None = None

    def pose(self) -> tuple[RigidTransform, tuple]:
        """Best pose estimate plus the full component weight vector."""
        if not self.translation.state.converged:
            raise NotReady(f"track {self.id}: translation not converged")
        if not self.rotation.components:
            raise NotReady(f"track {self.id}: no rotation components")
        mean, _ = map_estimate(self.rotation)
        pose = RigidTransform(mean, self.translation.state.t_wo)
        return pose, self.rotation.weights

    def _ingest_rotation(self, meas: RotationMeasurement) -> None:
        ingest(self.rotation, meas, self.symmetry)
        self.weight_history.append((meas.frame_id, self.rotation.weights))


def epipolar_distance(
    prev: CenterMeasurement,
    frame_pose: RigidTransform,
    frame_intrinsics: CameraIntrinsics,
    pixel: np.ndarray,
) -> float:
    """Pixel distance to the epipolar line induced by a prior observation.

    When the two views share an optical center the epipolar geometry
    degenerates; the prior pixel is then transferred by rotation only and
    compared directly.
    """
    rel = frame_pose.inverse() @ prev.camera_pose  # prior camera -> current
    t = rel.translation
    prev_h = np.array([prev.pixel[0], prev.pixel[1], 1.0])
    if np.linalg.norm(t) < 1e-9:
        direction = rel.rotation.apply(np.linalg.inv(prev.intrinsics.k_matrix()) @ prev_h)
        if direction[2] <= 1e-9:
            return math.inf
        transferred = project(frame_intrinsics, direction)
        return float(np.linalg.norm(transferred - pixel))
    essential = skew(t) @ rel.rotation.matrix
    fundamental = (
        np.linalg.inv(frame_intrinsics.k_matrix()).T
        @ essential
        @ np.linalg.inv(prev.intrinsics.k_matrix())
    )
    line = fundamental @ prev_h
    norm = math.hypot(line[0], line[1])
    if norm < 1e-12:
        return math.inf
    pix_h = np.array([pixel[0], pixel[1], 1.0])
    return float(abs(line @ pix_h) / norm)


class SceneTracker:
    """Tracks every object in one camera session."""

    def __init__(self, config: TrackerConfig | None = None, models: dict | None = None):
        self.config = config or TrackerConfig()
        self.models = models or {}
        self.objects: list[TrackedObject] = []
        self.next_id = 0
        self.last_frame_id: int | None = None

    def _gate_distance(self, obj: TrackedObject, frame: FrameInput, det: Detection) -> float:
        if obj.label is not None and det.label is not None and obj.label != det.label:
            return math.inf
        if obj.translation.state.converged:
            try:
                p_cam = frame.camera_pose.inverse().transform_point(
                    obj.translation.state.t_wo
                )
                predicted = project(frame.intrinsics, p_cam)
            except Exception:
                return math.inf
            return float(np.linalg.norm(predicted - det.center.pixel))
        if obj.translation.measurements:
            return epipolar_distance(
                obj.translation.measurements[-1],
                frame.camera_pose,
                frame.intrinsics,
                det.center.pixel,
            )
        return math.inf

    def associate(self, frame: FrameInput):
        """Greedy nearest-first one-to-one matching under the pixel gate.

        Returns (matches, unmatched) where matches maps object index to
        detection index.
        """
        candidates = []
        for oi, obj in enumerate(self.objects):
            for di, det in enumerate(frame.detections):
                d = self._gate_distance(obj, frame, det)
                if d < self.config.gate_px:
                    candidates.append((d, oi, di))
        candidates.sort()
        matches: dict[int, int] = {}
        used_detections: set[int] = set()
        for _, oi, di in candidates:
            if oi in matches or di in used_detections:
                continue
            matches[oi] = di
            used_detections.add(di)
        unmatched = [di for di in range(len(frame.detections)) if di not in used_detections]
        return matches, unmatched

    def _new_track(self, frame: FrameInput, det: Detection) -> TrackedObject:
        model = self.models.get(det.label)
        diameter = model.diameter if model else 0.1
        symmetry = model.symmetry if model else SymmetryGroup.trivial()
        guess = init_from_bbox(det.bbox, frame.intrinsics, frame.camera_pose, diameter)
        obj = TrackedObject(
            id=self.next_id,
            label=det.label,
            model_diameter=diameter,
            symmetry=symmetry,
            translation=TranslationEstimator(
                init_guess=guess, options=self.config.translation
            ),
            rotation=RotationMixtureState(params=self.config.rotation),
        )
        self.next_id += 1
        self.objects.append(obj)
        return obj

    def ingest_frame(self, frame: FrameInput) -> None:
        if self.last_frame_id is not None and frame.frame_id <= self.last_frame_id:
            raise ValueError(
                f"frame ids must be strictly increasing "
                f"({frame.frame_id} after {self.last_frame_id})"
            )
        self.last_frame_id = frame.frame_id

        matches, unmatched = self.associate(frame)
        touched: list[tuple[TrackedObject, Detection]] = []

        for oi, di in sorted(matches.items()):
            obj, det = self.objects[oi], frame.detections[di]
            obj.frames_seen += 1
            obj.last_error = None
            try:
                obj.translation.add_measurement(det.center)
            except Exception as exc:  # keep the frame alive per object
                obj.last_error = f"{type(exc).__name__}: {exc}"
            touched.append((obj, det))

        for di in unmatched:
            det = frame.detections[di]
            obj = self._new_track(frame, det)
            obj.frames_seen += 1
            obj.translation.add_measurement(det.center)
            touched.append((obj, det))

        # Rotation step: only once the translation (hence the RoI scale)
        # is available; earlier measurements wait in the buffer.
        for obj, det in touched:
            if det.rotation is not None:
                obj.pending_rotations.append(det.rotation)
            if not obj.translation.state.converged:
                continue
            t_cam = frame.camera_pose.inverse().transform_point(
                obj.translation.state.t_wo
            )
            if t_cam[2] > 1e-9:
                obj.roi_history.append(
                    (
                        frame.frame_id,
                        roi_side(
                            self.config.roi_reference_side_px,
                            self.config.roi_reference_depth,
                            float(t_cam[2]),
                        ),
                    )
                )
            for meas in obj.pending_rotations:
                try:
                    obj._ingest_rotation(meas)
                except Exception as exc:
                    obj.last_error = f"{type(exc).__name__}: {exc}"
            obj.pending_rotations.clear()

    def get_pose(self, object_id: int) -> tuple[RigidTransform, tuple]:
        for obj in self.objects:
            if obj.id == object_id:
                return obj.pose()
        raise KeyError(f"no tracked object with id {object_id}")

    # -- serialization ----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "schema": "mv6d-tracker-state",
            "version": STATE_SCHEMA_VERSION,
            "next_id": self.next_id,
            "last_frame_id": self.last_frame_id,
            "objects": [_object_to_dict(o) for o in self.objects],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


def _object_to_dict(obj: TrackedObject) -> dict:
    st = obj.translation.state
    return {
        "id": obj.id,
        "label": obj.label,
        "model_diameter": obj.model_diameter,
        "frames_seen": obj.frames_seen,
        "translation": {
            "t_wo": list(st.t_wo),
            "converged": st.converged,
            "n_measurements": st.n_measurements,
            "final_cost": st.final_cost if math.isfinite(st.final_cost) else None,
            "info_matrix": [list(row) for row in st.info_matrix],
        },
        "rotation": {
            "weights": list(obj.rotation.weights),
            "components": [
                {
                    "mean": [list(row) for row in c.mean.matrix],
                    "confidence_sum": c.confidence_sum,
                    "members": [
                        {
                            "frame_id": m.frame_id,
                            "confidence": m.confidence,
                            "canonical": [list(row) for row in canon.matrix],
                        }
                        for m, canon in c.members
                    ],
                }
                for c in obj.rotation.components
            ],
        },
        "pending_rotations": [m.frame_id for m in obj.pending_rotations],
        "roi_history": [[fid, side] for fid, side in obj.roi_history],
        "weight_history": [[fid, list(w)] for fid, w in obj.weight_history],
    }
