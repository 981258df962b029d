"""Rotational symmetry groups and measurement canonicalization.

A symmetry group is a finite list of model-frame rotations that leave the
object's appearance unchanged.  A template matcher therefore reports a
rotation only up to right-multiplication by a group element, so before a
measurement is fused it is replaced by the orbit member closest to the
current prediction (``canonicalize``).  Continuous revolution symmetry is
approximated by a uniform discretization.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidOrder
from .geometry import Rotation3, angle_between, exp_so3

DUPLICATE_TOL = 1e-6
REVOLUTION_STEPS = 36  # 10 degree steps, well under the acceptance gate


class SymmetryGroup:
    """Finite set of model-frame rotations, identity always first."""

    __slots__ = ("elements", "_stack")

    def __init__(self, elements):
        elems = list(elements)
        if not elems:
            raise ValueError("symmetry group cannot be empty")
        if angle_between(elems[0], Rotation3.identity()) > DUPLICATE_TOL:
            raise ValueError("symmetry group must contain the identity first")
        for i, a in enumerate(elems):
            for b in elems[i + 1 :]:
                if angle_between(a, b) <= DUPLICATE_TOL:
                    raise ValueError("symmetry group has duplicate elements")
        object.__setattr__(self, "elements", tuple(elems))
        stack = np.stack([e.matrix for e in elems])
        stack.flags.writeable = False
        object.__setattr__(self, "_stack", stack)

    def __setattr__(self, name, value):
        raise AttributeError("SymmetryGroup is immutable")

    def __len__(self) -> int:
        return len(self.elements)

    @staticmethod
    def trivial() -> "SymmetryGroup":
        return SymmetryGroup([Rotation3.identity()])

    @staticmethod
    def from_rotations(rotations) -> "SymmetryGroup":
        """Build from an explicit list; identity is supplied if missing."""
        ident = Rotation3.identity()
        rest = [r for r in rotations if angle_between(r, ident) > DUPLICATE_TOL]
        return SymmetryGroup([ident] + rest)

    def orbit_stack(self, rot: Rotation3) -> np.ndarray:
        """All orbit members rot @ G as an (n, 3, 3) array."""
        return rot.matrix @ self._stack


def generate_cyclic(axis: np.ndarray, order: int) -> SymmetryGroup:
    """Cyclic group of the given order about a unit axis.

    Elements are rotations by 2*pi*j/order, j = 0..order-1.  Closure is
    verified by brute force at construction.
    """
    if not isinstance(order, int) or order < 1:
        raise InvalidOrder(f"cyclic order must be an integer >= 1, got {order!r}")
    axis = np.asarray(axis, dtype=float)
    if abs(np.linalg.norm(axis) - 1.0) > 1e-9:
        raise ValueError("symmetry axis must be unit length")
    elems = [exp_so3(axis * (2.0 * np.pi * j / order)) for j in range(order)]
    group = SymmetryGroup(elems)
    _check_closure(group)
    return group


def generate_revolution(axis: np.ndarray, steps: int = REVOLUTION_STEPS) -> SymmetryGroup:
    """Discretized surface-of-revolution symmetry about a unit axis."""
    return generate_cyclic(axis, steps)


def _check_closure(group: SymmetryGroup, tol: float = DUPLICATE_TOL) -> None:
    for a in group.elements:
        for b in group.elements:
            prod = a @ b
            if min(angle_between(prod, g) for g in group.elements) > tol:
                raise ValueError("generated symmetry group is not closed")


def equivalent_rotations(group: SymmetryGroup, rot: Rotation3) -> list[Rotation3]:
    """Orbit of a rotation: rot @ G for every group element G."""
    return [rot @ g for g in group.elements]


def _orbit_angles(group: SymmetryGroup, rot: Rotation3, reference: Rotation3) -> np.ndarray:
    """Angle of (rot @ G) relative to the reference, for all G at once."""
    orbit = group.orbit_stack(rot)
    traces = np.einsum("nij,ij->n", orbit, reference.matrix)
    return np.arccos(np.clip(0.5 * (traces - 1.0), -1.0, 1.0))


def canonicalize(
    group: SymmetryGroup, measured: Rotation3, predicted: Rotation3
) -> tuple[Rotation3, float]:
    """Orbit member of the measurement closest to the prediction.

    Returns the replacement rotation and its angular distance to the
    prediction.  Ties break toward the lowest group-element index.
    """
    angles = _orbit_angles(group, measured, predicted)
    best = int(np.argmin(angles))
    if best == 0:
        return measured, float(angles[0])
    return measured @ group.elements[best], float(angles[best])


def symmetry_aware_angle(group: SymmetryGroup, a: Rotation3, b: Rotation3) -> float:
    """Smallest angle between a and b over the symmetry orbit of a."""
    return float(np.min(_orbit_angles(group, a, b)))
