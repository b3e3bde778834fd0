"""Pose geometry: joint regression, projection, orientation lines and angles.

Pose space convention: x right, y up, z toward the camera.  Angles are read
in the horizontal (x, z) plane, measured from the reference direction
(-1, 0, 0) and increasing toward +z.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scene_model import CameraModel, Pose3D

DEGENERATE_NORM = 1e-9
REFERENCE_DIRECTION = np.array([-1.0, 0.0, 0.0])


class GeometryError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class OrientationLine:
    """Line ``base_point + t * direction`` for t > 0; direction is not normalized."""

    base_point: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        base = np.asarray(self.base_point, dtype=float).reshape(3)
        d = np.asarray(self.direction, dtype=float).reshape(3)
        if not np.linalg.norm(d) > DEGENERATE_NORM:
            raise GeometryError("zero direction")
        object.__setattr__(self, "base_point", base)
        object.__setattr__(self, "direction", d)

    def point(self, t: float) -> np.ndarray:
        if not t > 0:
            raise ValueError("line parameter must be positive")
        return self.base_point + t * self.direction

    @property
    def unit(self) -> np.ndarray:
        return self.direction / np.linalg.norm(self.direction)


@dataclass(frozen=True, eq=False)
class JointRegressor:
    weights: np.ndarray

    def __post_init__(self):
        W = np.array(self.weights, dtype=float)
        if W.ndim != 2 or not np.all(np.isfinite(W)):
            raise ValueError("regressor weights must be a finite 2-D matrix")
        W.setflags(write=False)
        object.__setattr__(self, "weights", W)

    @property
    def n_joints(self) -> int:
        return self.weights.shape[0]

    @property
    def n_vertices(self) -> int:
        return self.weights.shape[1]


def regress_joints(vertices, regressor: JointRegressor) -> np.ndarray:
    """Joint locations as a fixed linear combination of mesh vertices (J x 3)."""
    V = np.asarray(vertices, dtype=float)
    if V.ndim != 2 or V.shape[1] != 3:
        raise ValueError(f"vertices must be (V, 3), got {V.shape}")
    if V.shape[0] != regressor.n_vertices:
        raise ValueError(
            f"dimension mismatch: {V.shape[0]} vertices for a regressor over {regressor.n_vertices}")
    return regressor.weights @ V


def project_point(p3d, camera: CameraModel) -> np.ndarray:
    """Pinhole projection of a 3D point to pixel coordinates (u, v)."""
    cam = camera.rotation @ np.asarray(p3d, dtype=float) + camera.translation
    depth = cam[2]
    if not depth > 0:
        raise GeometryError("point behind camera")
    return (camera.intrinsic @ cam)[:2] / depth


def project_direction(direction, camera: CameraModel) -> np.ndarray:
    """Image-plane direction of a 3D direction under the affine camera approximation.

    The depth component of the rotated direction is dropped, which is exact
    for directions parallel to the image plane.
    """
    d = camera.rotation @ np.asarray(direction, dtype=float)
    return camera.intrinsic[:2, :2] @ d[:2]


def head_orientation(pose: Pose3D) -> OrientationLine:
    eyes = (pose["eye_l"] + pose["eye_r"]) / 2.0
    head = (pose["head_top"] + pose["jaw"]) / 2.0
    return OrientationLine(eyes, eyes - head)


def body_orientation(pose: Pose3D) -> OrientationLine:
    """Normal of the plane through both shoulders and the mid-hip."""
    sl, sr, hm = pose["shoulder_l"], pose["shoulder_r"], pose["hip_mid"]
    normal = np.cross(sl - hm, sr - hm)
    if not np.linalg.norm(normal) > DEGENERATE_NORM:
        raise GeometryError("degenerate torso plane")
    return OrientationLine((sl + sr + hm) / 3.0, normal)


def direction_to_angle(direction, calibration_offset: float = 0.0) -> float:
    d = np.asarray(direction, dtype=float)
    # (-1,0,0) . d  and the y-component of (-1,0,0) x d
    along = -d[0]
    across = d[2]
    if not np.hypot(along, across) > DEGENERATE_NORM:
        raise GeometryError("vertical direction has no horizontal angle")
    angle = (np.degrees(np.arctan2(across, along)) + calibration_offset) % 360.0
    # x % 360 can round up to exactly 360 for tiny negative x
    return 0.0 if angle >= 360.0 else float(angle)


def orientation_to_angle(line: OrientationLine, calibration_offset: float = 0.0) -> float:
    """Horizontal angle of an orientation line in degrees, in [0, 360)."""
    return direction_to_angle(line.direction, calibration_offset)


def yaw_rotation(degrees: float) -> np.ndarray:
    """Rotation about the vertical axis that adds ``degrees`` to orientation angles."""
    a = np.radians(degrees)
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def angular_error(theta_a, theta_b):
    """Wrap-around distance between two angles in degrees, in [0, 180]."""
    diff = np.abs(np.asarray(theta_a, dtype=float) - np.asarray(theta_b, dtype=float)) % 360.0
    out = np.minimum(diff, 360.0 - diff)
    return float(out) if np.ndim(out) == 0 else out


def cosine_gap(u, v) -> float:
    """``1 - cos`` of the angle between two vectors, in [0, 2]."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if not (nu > DEGENERATE_NORM and nv > DEGENERATE_NORM):
        raise GeometryError("zero-length vector")
    cos = float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))
    return 1.0 - cos
