"""Rotation fusion with a confidence-weighted max-mixture on SO(3).

Per-view rotation measurements are multi-modal: symmetric or ambiguous
objects produce clusters of mutually inconsistent hypotheses.  The
posterior is kept as a set of components, each with a mean rotation and
an accumulated confidence.  A new measurement is first canonicalized
against each component (symmetry orbit member closest to the component's
prediction), then assigned to the component with the smallest angular
error if that error is under the acceptance gate, otherwise it seeds a
new component.  The selected component's mean is refined by Gauss-Newton
on the so(3) tangent space with per-measurement confidence weights, and
component weights are the normalized accumulated confidences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import Diverged, EmptyState
from .geometry import (
    Rotation3,
    exp_so3,
    inverse_right_jacobian,
    log_so3,
)
from .symmetry import SymmetryGroup, canonicalize

DEFAULT_ACCEPT_RAD = math.radians(30.0)


@dataclass(frozen=True)
class RotationMeasurement:
    """One view's rotation hypothesis with its matcher confidence.

    ``camera_from_object`` is the object's rotation in the camera frame;
    ``world_from_camera`` is the camera's orientation in the world frame.
    """

    frame_id: int
    camera_from_object: Rotation3
    confidence: float
    world_from_camera: Rotation3

    def __post_init__(self):
        if not (0.0 < self.confidence <= 1.0):
            raise ValueError(f"confidence must be in (0, 1], got {self.confidence}")


def predict_camera_from_object(
    world_from_object: Rotation3, world_from_camera: Rotation3
) -> Rotation3:
    """Measurement model: what the camera would observe for a world rotation."""
    return world_from_camera.inverse() @ world_from_object


@dataclass
class MixtureComponent:
    """One mode of the rotation posterior.

    ``members`` keeps (measurement, canonicalized rotation) pairs; the
    canonical rotation is the symmetry-orbit member used for fusion.
    ``info_matrix`` is the Gauss-Newton normal matrix at convergence,
    kept for diagnostics only.
    """

    mean: Rotation3
    confidence_sum: float
    weight: float = 0.0
    members: list = field(default_factory=list)
    created_frame: int = 0
    info_matrix: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))


@dataclass
class RotationParams:
    acceptance_threshold: float = DEFAULT_ACCEPT_RAD
    refresh_canonicalization: bool = True
    max_iterations: int = 50
    step_tolerance: float = 1e-9
    max_halvings: int = 8
    divergence_patience: int = 5
    prune_enabled: bool = False
    prune_min_weight: float = 0.01
    prune_max_age: int = 10


@dataclass
class RotationMixtureState:
    components: list[MixtureComponent] = field(default_factory=list)
    params: RotationParams = field(default_factory=RotationParams)

    @property
    def weights(self) -> tuple:
        return tuple(c.weight for c in self.components)


def angle_to_component(
    meas: RotationMeasurement, comp: MixtureComponent, group: SymmetryGroup
) -> float:
    """Symmetry-canonicalized angular error of a measurement to a component."""
    predicted = predict_camera_from_object(comp.mean, meas.world_from_camera)
    _, angle = canonicalize(group, meas.camera_from_object, predicted)
    return angle


def assign(
    state: RotationMixtureState, meas: RotationMeasurement, group: SymmetryGroup
) -> int | None:
    """Index of the best-fitting component, or None for a new one.

    The best component wins only if its canonicalized angle is strictly
    below the acceptance threshold; ties go to the lowest index.
    """
    if not state.components:
        return None
    angles = [angle_to_component(meas, c, group) for c in state.components]
    best = int(np.argmin(angles))
    if angles[best] < state.params.acceptance_threshold:
        return best
    return None


def ingest(
    state: RotationMixtureState, meas: RotationMeasurement, group: SymmetryGroup
) -> RotationMixtureState:
    """Fold one measurement into the mixture (in place) and return it."""
    idx = assign(state, meas, group)
    if idx is None:
        mean = meas.world_from_camera @ meas.camera_from_object
        comp = MixtureComponent(
            mean=mean,
            confidence_sum=meas.confidence,
            members=[(meas, meas.camera_from_object)],
            created_frame=meas.frame_id,
        )
        state.components.append(comp)
    else:
        comp = state.components[idx]
        predicted = predict_camera_from_object(comp.mean, meas.world_from_camera)
        canonical, _ = canonicalize(group, meas.camera_from_object, predicted)
        comp.members.append((meas, canonical))
        comp.confidence_sum += meas.confidence
        refine_component(comp, group, state.params)

    if state.params.prune_enabled:
        _prune(state, meas.frame_id)
    _renormalize(state)
    return state


def _renormalize(state: RotationMixtureState) -> None:
    total = sum(c.confidence_sum for c in state.components)
    for c in state.components:
        c.weight = c.confidence_sum / total if total > 0 else 0.0


def _prune(state: RotationMixtureState, current_frame: int) -> None:
    if len(state.components) <= 1:
        return
    keep = [
        c
        for c in state.components
        if not (
            c.weight < state.params.prune_min_weight
            and current_frame - c.created_frame > state.params.prune_max_age
        )
    ]
    if keep:
        state.components = keep


def residual_and_jacobian(
    world_from_object: Rotation3, canonical: Rotation3, world_from_camera: Rotation3
):
    """Tangent-space residual of one measurement and its 3x3 Jacobian.

    The residual is log(R_meas @ prediction^-1) in so(3).  The Jacobian is
    with respect to a right perturbation of the world rotation,
    R <- R @ exp(delta), and evaluates to -Jr_inv(residual) @ prediction.
    """
    predicted = predict_camera_from_object(world_from_object, world_from_camera)
    err = canonical @ predicted.inverse()
    res = log_so3(err)
    jac = -inverse_right_jacobian(res) @ predicted.matrix
    return res, jac


def _component_cost(
    world_from_object: Rotation3,
    members,
    group: SymmetryGroup,
    refresh: bool,
):
    """Weighted squared residual norm, with optionally refreshed canonicals."""
    cost = 0.0
    canonicals = []
    for meas, canonical in members:
        if refresh:
            predicted = predict_camera_from_object(
                world_from_object, meas.world_from_camera
            )
            canonical, _ = canonicalize(group, meas.camera_from_object, predicted)
        res, _ = residual_and_jacobian(
            world_from_object, canonical, meas.world_from_camera
        )
        cost += meas.confidence * float(res @ res)
        canonicals.append(canonical)
    return cost, canonicals


def refine_component(
    comp: MixtureComponent, group: SymmetryGroup, params: RotationParams | None = None
) -> MixtureComponent:
    """Gauss-Newton refinement of the component mean on so(3).

    Residuals are confidence-weighted (isotropic per-measurement blocks);
    the symmetry canonicalization is refreshed every iteration by default
    because the argmin over the orbit depends on the evolving mean.
    """
    params = params or RotationParams()
    if not comp.members:
        raise ValueError("cannot refine a component with no members")

    mean = comp.mean
    cost, canonicals = _component_cost(
        mean, comp.members, group, params.refresh_canonicalization
    )
    increase_streak = 0

    for _ in range(params.max_iterations):
        info = np.zeros((3, 3))
        grad = np.zeros(3)
        for (meas, _), canonical in zip(comp.members, canonicals):
            res, jac = residual_and_jacobian(mean, canonical, meas.world_from_camera)
            info += meas.confidence * jac.T @ jac
            grad += meas.confidence * jac.T @ res
        step = -np.linalg.solve(info, grad)

        scale = 1.0
        for _ in range(params.max_halvings + 1):
            trial = mean @ exp_so3(scale * step)
            cost_trial, canonicals_trial = _component_cost(
                trial, comp.members, group, params.refresh_canonicalization
            )
            if cost_trial <= cost:
                break
            scale *= 0.5

        if cost_trial > cost:
            increase_streak += 1
            if increase_streak >= params.divergence_patience:
                raise Diverged("rotation refinement cost kept increasing")
        else:
            increase_streak = 0

        mean = mean @ exp_so3(scale * step)
        cost, canonicals = cost_trial, canonicals_trial
        comp.info_matrix = info

        if np.linalg.norm(scale * step) < params.step_tolerance:
            break

    comp.mean = mean
    comp.members = [
        (meas, canonical) for (meas, _), canonical in zip(comp.members, canonicals)
    ]
    return comp


def map_estimate(state: RotationMixtureState) -> tuple[Rotation3, float]:
    """Mean and weight of the heaviest component (ties: lowest index)."""
    if not state.components:
        raise EmptyState("rotation mixture has no components")
    best = int(np.argmax([c.weight for c in state.components]))
    comp = state.components[best]
    return comp.mean, comp.weight
