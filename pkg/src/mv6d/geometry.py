"""SO(3)/SE(3) primitives and the pinhole camera model.

Conventions used throughout the package:

* Rotations are stored as 3x3 orthonormal matrices with determinant +1.
* ``exp_so3`` / ``log_so3`` map between axis-angle vectors (radians) and
  rotations.  ``log_so3`` returns the minimal-angle vector, norm <= pi.
  At exactly pi the axis sign is ambiguous; we pick the sign that makes
  the largest-magnitude axis component positive.
* A pose ``T_wc`` (``camera_pose``) maps camera-frame points to world
  frame: ``p_w = R @ p_c + t``.
* Pixels are float arrays ``[u_x, u_y]``; the pinhole model is
  ``u = (fx * x / z + cx, fy * y / z + cy)``.

All values are immutable after construction and all operations are pure,
so concurrent use needs no locking.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonPositiveDepth

MIN_DEPTH = 1e-9


def skew(v: np.ndarray) -> np.ndarray:
    """Cross-product matrix: skew(v) @ w == cross(v, w)."""
    return np.array(
        [
            [0.0, -v[2], v[1]],
            [v[2], 0.0, -v[0]],
            [-v[1], v[0], 0.0],
        ]
    )


def _vee(m: np.ndarray) -> np.ndarray:
    return np.array([m[2, 1], m[0, 2], m[1, 0]])


class Rotation3:
    """Element of SO(3) backed by a read-only 3x3 matrix."""

    __slots__ = ("matrix",)

    def __init__(self, matrix: np.ndarray):
        m = np.asarray(matrix, dtype=float)
        if m.shape != (3, 3):
            raise ValueError("rotation matrix must be 3x3")
        m = np.ascontiguousarray(m)
        m.flags.writeable = False
        object.__setattr__(self, "matrix", m)

    def __setattr__(self, name, value):
        raise AttributeError("Rotation3 is immutable")

    @staticmethod
    def identity() -> "Rotation3":
        return Rotation3(np.eye(3))

    @staticmethod
    def from_matrix(matrix: np.ndarray, atol: float = 1e-6) -> "Rotation3":
        """Validating constructor for externally supplied matrices."""
        m = np.asarray(matrix, dtype=float)
        if m.shape != (3, 3):
            raise ValueError("rotation matrix must be 3x3")
        if not np.allclose(m.T @ m, np.eye(3), atol=atol):
            raise ValueError("matrix is not orthonormal")
        if np.linalg.det(m) < 0:
            raise ValueError("matrix has determinant -1 (reflection)")
        return Rotation3(m)

    def compose(self, other: "Rotation3") -> "Rotation3":
        return Rotation3(self.matrix @ other.matrix)

    __matmul__ = compose

    def inverse(self) -> "Rotation3":
        return Rotation3(self.matrix.T)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Rotate a 3-vector or an (N, 3) stack of vectors."""
        p = np.asarray(points, dtype=float)
        return p @ self.matrix.T

    def __repr__(self) -> str:
        return f"Rotation3(axis_angle={np.array2string(log_so3(self), precision=6)})"


def exp_so3(phi: np.ndarray) -> Rotation3:
    """Rotation about axis phi/|phi| by angle |phi| (radians).

    Uses the Rodrigues formula, with a second-order series below 1e-8
    where sin/cos ratios lose precision.
    """
    phi = np.asarray(phi, dtype=float)
    theta = float(np.linalg.norm(phi))
    k = skew(phi)
    if theta < 1e-8:
        a = 1.0 - theta**2 / 6.0
        b = 0.5 - theta**2 / 24.0
    else:
        a = np.sin(theta) / theta
        b = (1.0 - np.cos(theta)) / theta**2
    return Rotation3(np.eye(3) + a * k + b * (k @ k))


def log_so3(rot: Rotation3) -> np.ndarray:
    """Minimal axis-angle vector of a rotation, |result| <= pi.

    Three branches: a series near zero, the standard formula elsewhere,
    and an axis extraction from (R + I) / 2 near pi where the standard
    formula is singular.  Near pi the sign comes from vee(R - R^T) when
    that is nonzero; at exactly pi the largest-magnitude axis component
    is made positive.
    """
    m = rot.matrix
    trace = float(np.trace(m))
    cos_theta = min(1.0, max(-1.0, 0.5 * (trace - 1.0)))
    theta = float(np.arccos(cos_theta))
    anti = _vee(m - m.T)

    if theta < 1e-7:
        # theta / (2 sin theta) ~ 1/2 + theta^2 / 12
        return (0.5 + theta**2 / 12.0) * anti

    if np.pi - theta < 1e-4:
        # R = I + 2 K^2 at pi, so (R + I) / 2 = a a^T; take the column
        # with the largest diagonal entry as the axis.
        outer = 0.5 * (m + np.eye(3))
        i = int(np.argmax(np.diag(outer)))
        axis = outer[:, i] / np.sqrt(max(outer[i, i], 1e-12))
        axis = axis / np.linalg.norm(axis)
        sign_ref = anti @ axis
        if abs(sign_ref) > 1e-12:
            if sign_ref < 0.0:
                axis = -axis
        elif axis[int(np.argmax(np.abs(axis)))] < 0.0:
            axis = -axis
        return theta * axis

    return (theta / (2.0 * np.sin(theta))) * anti


def rotation_angle(rot: Rotation3) -> float:
    """Absolute rotation angle in [0, pi]."""
    trace = float(np.trace(rot.matrix))
    return float(np.arccos(min(1.0, max(-1.0, 0.5 * (trace - 1.0)))))


def angle_between(a: Rotation3, b: Rotation3) -> float:
    """Geodesic distance on SO(3): angle of a @ b^-1."""
    trace = float(np.einsum("ij,ij->", a.matrix, b.matrix))
    return float(np.arccos(min(1.0, max(-1.0, 0.5 * (trace - 1.0)))))


def inverse_right_jacobian(phi: np.ndarray) -> np.ndarray:
    """Inverse of the right Jacobian of SO(3) at tangent vector phi.

    Satisfies log(exp(phi) exp(eps)) ~ phi + Jr_inv(phi) eps for small eps.
    """
    phi = np.asarray(phi, dtype=float)
    theta = float(np.linalg.norm(phi))
    k = skew(phi)
    if theta < 1e-4:
        c = 1.0 / 12.0 + theta**2 / 720.0
    else:
        c = 1.0 / theta**2 - (1.0 + np.cos(theta)) / (2.0 * theta * np.sin(theta))
    return np.eye(3) + 0.5 * k + c * (k @ k)


class RigidTransform:
    """SE(3) element: ``p_out = rotation @ p_in + translation`` (meters)."""

    __slots__ = ("rotation", "translation")

    def __init__(self, rotation: Rotation3, translation: np.ndarray):
        t = np.asarray(translation, dtype=float).reshape(3).copy()
        t.flags.writeable = False
        object.__setattr__(self, "rotation", rotation)
        object.__setattr__(self, "translation", t)

    def __setattr__(self, name, value):
        raise AttributeError("RigidTransform is immutable")

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(Rotation3.identity(), np.zeros(3))

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation.apply(other.translation) + self.translation,
        )

    __matmul__ = compose

    def inverse(self) -> "RigidTransform":
        rot_inv = self.rotation.inverse()
        return RigidTransform(rot_inv, -rot_inv.apply(self.translation))

    def transform_point(self, points: np.ndarray) -> np.ndarray:
        """Apply to a 3-vector or an (N, 3) stack."""
        return self.rotation.apply(points) + self.translation

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation.matrix
        m[:3, 3] = self.translation
        return m

    def __repr__(self) -> str:
        return (
            f"RigidTransform(t={np.array2string(self.translation, precision=6)}, "
            f"{self.rotation!r})"
        )


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole parameters in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @property
    def mean_focal(self) -> float:
        return 0.5 * (self.fx + self.fy)

    def k_matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )


def project(intrinsics: CameraIntrinsics, p_cam: np.ndarray) -> np.ndarray:
    """Perspective projection of a camera-frame point to pixels."""
    p = np.asarray(p_cam, dtype=float)
    z = p[2]
    if z <= MIN_DEPTH:
        raise NonPositiveDepth(f"point depth {z:.3g} m is not positive")
    return np.array(
        [intrinsics.fx * p[0] / z + intrinsics.cx, intrinsics.fy * p[1] / z + intrinsics.cy]
    )


def backproject(intrinsics: CameraIntrinsics, pixel: np.ndarray, depth: float) -> np.ndarray:
    """Camera-frame point on the pixel ray at the given depth."""
    if depth <= MIN_DEPTH:
        raise NonPositiveDepth(f"depth {depth:.3g} m is not positive")
    u = np.asarray(pixel, dtype=float)
    return np.array(
        [
            (u[0] - intrinsics.cx) / intrinsics.fx * depth,
            (u[1] - intrinsics.cy) / intrinsics.fy * depth,
            depth,
        ]
    )


def roi_side(reference_side: float, reference_depth: float, depth: float) -> float:
    """Rescale a square RoI trained at one depth to match another depth.

    The apparent size scales inversely with depth, so the side length is
    reference_side * reference_depth / depth.
    """
    if reference_depth <= MIN_DEPTH or depth <= MIN_DEPTH:
        raise NonPositiveDepth("RoI scaling needs positive depths")
    if reference_side <= 0:
        raise ValueError("reference RoI side must be positive")
    return reference_side * reference_depth / depth
