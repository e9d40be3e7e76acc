"""Spherical projection math, pose algebra and rotation utilities.

Conventions (fixed for the whole package):
  - The camera looks along +X at the image center, +Z is up.
  - Equirectangular images have W = 2H; pixel centers sit at integer
    coordinates.
  - Azimuth theta = atan2(y, x) maps to u = (theta/(2*pi) + 0.5)*W - 0.5,
    increasing rightward; elevation phi = asin(z/|p|) maps to
    v = (0.5 - phi/pi)*H - 0.5, with up at v = 0.
  - A Pose (R, t) maps cloud coordinates into the camera frame: p = R*x + t.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegeneratePoint

_EPS_CENTER = 1e-12


@dataclass(frozen=True)
class Pose:
    """Rigid transform mapping world (cloud) points into the camera frame."""

    rotation: np.ndarray  # (3, 3)
    translation: np.ndarray  # (3,)

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)
        if R.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {R.shape}")
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-6):
            raise ValueError("rotation is not orthonormal")
        if np.linalg.det(R) < 0:
            raise ValueError("rotation has negative determinant")

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_camera_center(cls, rotation: np.ndarray, center: np.ndarray) -> "Pose":
        """Pose of a camera sitting at `center` (world frame) with orientation
        `rotation`; the resulting transform is p = R*(x - center)."""
        rotation = np.asarray(rotation, dtype=np.float64)
        center = np.asarray(center, dtype=np.float64).reshape(3)
        return cls(rotation, -rotation @ center)

    @property
    def camera_center(self) -> np.ndarray:
        """Camera position in the world frame: -R^T t."""
        return -self.rotation.T @ self.translation

    def compose(self, other: "Pose") -> "Pose":
        """self o other: apply `other` first, then `self`."""
        return Pose(self.rotation @ other.rotation,
                    self.rotation @ other.translation + self.translation)

    def inverse(self) -> "Pose":
        return Pose(self.rotation.T, -self.rotation.T @ self.translation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        return apply_pose(self, points)


def apply_pose(pose: Pose, points: np.ndarray) -> np.ndarray:
    """Transform (N, 3) or (3,) points by p = R*x + t."""
    points = np.asarray(points, dtype=np.float64)
    return points @ pose.rotation.T + pose.translation


def project(points: np.ndarray, image_height: int, image_width: int,
            strict: bool = True):
    """Project 3D camera-frame points onto the equirectangular image.

    Args:
        points: (3,) or (N, 3) camera-frame coordinates.
        image_height: H; image_width must equal 2H.
        strict: if True, raise DegeneratePoint on points at the camera
            center; if False, return a validity mask instead.

    Returns:
        (u, v) arrays (scalars for a single point); with strict=False a
        third boolean array marks non-degenerate points.
    """
    if image_width != 2 * image_height:
        raise ValueError("equirectangular images require W = 2H")
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    norms = np.linalg.norm(pts, axis=1)
    ok = norms >= _EPS_CENTER
    if strict and not np.all(ok):
        raise DegeneratePoint("point at camera center")
    safe = np.where(ok, norms, 1.0)
    theta = np.arctan2(pts[:, 1], pts[:, 0])
    phi = np.arcsin(np.clip(pts[:, 2] / safe, -1.0, 1.0))
    u = (theta / (2.0 * np.pi) + 0.5) * image_width - 0.5
    u = np.mod(u + 0.5, image_width) - 0.5
    v = (0.5 - phi / np.pi) * image_height - 0.5
    single = np.asarray(points).ndim == 1
    if single:
        u, v, ok = u[0], v[0], ok[0]
    if strict:
        return u, v
    return u, v, ok


def unproject(u: np.ndarray, v: np.ndarray, image_height: int,
              image_width: int) -> np.ndarray:
    """Map pixel coordinates to unit direction vectors ((N, 3) or (3,))."""
    if image_width != 2 * image_height:
        raise ValueError("equirectangular images require W = 2H")
    u_arr = np.atleast_1d(np.asarray(u, dtype=np.float64))
    v_arr = np.atleast_1d(np.asarray(v, dtype=np.float64))
    theta = ((u_arr + 0.5) / image_width - 0.5) * 2.0 * np.pi
    phi = (0.5 - (v_arr + 0.5) / image_height) * np.pi
    cp = np.cos(phi)
    dirs = np.stack([cp * np.cos(theta), cp * np.sin(theta), np.sin(phi)], axis=-1)
    if np.isscalar(u) or np.asarray(u).ndim == 0:
        return dirs[0]
    return dirs


def sample_rotations(count: int, seed: int) -> np.ndarray:
    """Draw `count` rotation matrices uniformly (Haar) from SO(3).

    Uses normalized Gaussian quaternions from a seeded generator, so the
    output is deterministic for a fixed (count, seed).
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    q = rng.standard_normal((count, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    return quaternion_to_matrix(q)


def quaternion_to_matrix(q: np.ndarray) -> np.ndarray:
    """Convert unit quaternions (..., 4), scalar-first, to rotation matrices."""
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    R = np.empty(q.shape[:-1] + (3, 3))
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def rotation_error(Ra: np.ndarray, Rb: np.ndarray) -> float:
    """Geodesic angle between two rotations, in radians (range [0, pi])."""
    cos = (np.trace(Ra @ Rb.T) - 1.0) / 2.0
    return float(np.arccos(np.clip(cos, -1.0, 1.0)))


def skew(v: np.ndarray) -> np.ndarray:
    """Cross-product matrix of a 3-vector."""
    return np.array([[0.0, -v[2], v[1]],
                     [v[2], 0.0, -v[0]],
                     [-v[1], v[0], 0.0]])


def exp_so3(omega: np.ndarray) -> np.ndarray:
    """Rodrigues exponential map from an axis-angle 3-vector to SO(3)."""
    omega = np.asarray(omega, dtype=np.float64).reshape(3)
    angle = np.linalg.norm(omega)
    if angle < 1e-12:
        K = skew(omega)
        return np.eye(3) + K + 0.5 * K @ K
    axis = omega / angle
    K = skew(axis)
    return np.eye(3) + np.sin(angle) * K + (1.0 - np.cos(angle)) * (K @ K)


def log_so3(R: np.ndarray) -> np.ndarray:
    """Axis-angle 3-vector of a rotation matrix (inverse of exp_so3)."""
    cos = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    angle = np.arccos(cos)
    if angle < 1e-8:
        return 0.5 * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0],
                               R[1, 0] - R[0, 1]])
    if angle > np.pi - 1e-6:
        # near pi: recover the axis from the symmetric part
        A = (R + np.eye(3)) / 2.0
        axis = np.sqrt(np.clip(np.diag(A), 0.0, None))
        signs = np.array([1.0,
                          np.sign(A[0, 1]) or 1.0,
                          np.sign(A[0, 2]) or 1.0])
        axis = axis * signs
        axis /= np.linalg.norm(axis) + 1e-12
        return angle * axis
    axis = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    return angle / (2.0 * np.sin(angle)) * axis


def rot_z(alpha: float) -> np.ndarray:
    """Rotation by `alpha` radians about the +Z (up) axis."""
    c, s = np.cos(alpha), np.sin(alpha)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
