"""Pinhole camera and rectified stereo rig geometry.

Camera frames follow the usual computer-vision convention: +x right, +y down,
+z forward. Integer pixel coordinates address pixel centres.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NonPositiveDepth

#: Default disparity floor in pixels; smaller disparities are reported invalid.
MIN_DISPARITY = 0.1

# Reference sensor at 1280x720; other resolutions scale proportionally.
REFERENCE_WIDTH = 1280
REFERENCE_HEIGHT = 720
REFERENCE_FOCAL = 693.0
REFERENCE_BASELINE = 0.055
REFERENCE_PROJECTOR_OFFSET = 0.0275


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @property
    def shape(self):
        return (self.height, self.width)

    def matrix(self):
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def scaled(self, width, height):
        """Same field of view at another resolution."""
        sx = width / self.width
        sy = height / self.height
        return Intrinsics(self.fx * sx, self.fy * sy, self.cx * sx, self.cy * sy, int(width), int(height))

    def to_dict(self):
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                   int(d["width"]), int(d["height"]))


@dataclass(frozen=True, eq=False)
class RigidPose:
    """Rotation plus translation mapping local coordinates into a parent frame."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-9) or abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise ValueError("rotation must be proper orthonormal")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    def __eq__(self, other):
        if not isinstance(other, RigidPose):
            return NotImplemented
        return np.array_equal(self.rotation, other.rotation) and np.array_equal(self.translation, other.translation)

    def __hash__(self):
        return hash((self.rotation.tobytes(), self.translation.tobytes()))

    def __matmul__(self, other):
        """Composition: ``(a @ b)(p) == a(b(p))``."""
        return RigidPose(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    def inverse(self):
        Rt = self.rotation.T
        return RigidPose(Rt, -Rt @ self.translation)

    def matrix(self):
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def to_dict(self):
        return {"rotation": self.rotation.tolist(), "translation": self.translation.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["rotation"], dtype=np.float64), np.array(d["translation"], dtype=np.float64))

    @classmethod
    def from_translation(cls, t):
        return cls(np.eye(3), np.asarray(t, dtype=np.float64))


@dataclass(frozen=True)
class StereoRig:
    """Rectified IR stereo pair with a texture projector between the cameras.

    Both IR cameras share ``intrinsics`` and orientation; the right camera and
    the projector sit at ``baseline`` and ``projector_offset`` along the left
    camera's +x axis.
    """

    intrinsics: Intrinsics
    baseline: float = REFERENCE_BASELINE
    left_pose: RigidPose = field(default_factory=RigidPose)
    projector_offset: float = REFERENCE_PROJECTOR_OFFSET
    color_offset: RigidPose = field(default_factory=RigidPose)

    def __post_init__(self):
        if not self.baseline > 0:
            raise ValueError("baseline must be positive")

    @property
    def right_pose(self):
        return self.left_pose @ RigidPose.from_translation((self.baseline, 0.0, 0.0))

    @property
    def projector_pose(self):
        return self.left_pose @ RigidPose.from_translation((self.projector_offset, 0.0, 0.0))

    @property
    def color_pose(self):
        return self.left_pose @ self.color_offset

    def with_pose(self, left_pose):
        return StereoRig(self.intrinsics, self.baseline, left_pose, self.projector_offset, self.color_offset)

    def to_dict(self):
        return {
            "intrinsics": self.intrinsics.to_dict(),
            "baseline": self.baseline,
            "left_pose": self.left_pose.to_dict(),
            "projector_offset": self.projector_offset,
            "color_offset": self.color_offset.to_dict(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            Intrinsics.from_dict(d["intrinsics"]),
            float(d["baseline"]),
            RigidPose.from_dict(d["left_pose"]),
            float(d["projector_offset"]),
            RigidPose.from_dict(d["color_offset"]),
        )


def default_intrinsics(width=640, height=360):
    """D415-like intrinsics scaled to ``width`` x ``height``."""
    sx = width / REFERENCE_WIDTH
    sy = height / REFERENCE_HEIGHT
    return Intrinsics(REFERENCE_FOCAL * sx, REFERENCE_FOCAL * sy, width / 2.0, height / 2.0, int(width), int(height))


def default_rig(width=640, height=360, left_pose=None):
    return StereoRig(default_intrinsics(width, height), left_pose=left_pose or RigidPose())


def project(point, k):
    """Project camera-frame point(s) of shape (..., 3) to pixel coordinates (..., 2)."""
    p = np.asarray(point, dtype=np.float64)
    z = p[..., 2]
    if np.any(z <= 0):
        raise NonPositiveDepth("cannot project a point with z <= 0")
    u = k.fx * p[..., 0] / z + k.cx
    v = k.fy * p[..., 1] / z + k.cy
    return np.stack([u, v], axis=-1)


def unproject(pixel, depth, k):
    """Back-project pixel(s) (..., 2) at z-depth(s) to camera-frame points (..., 3)."""
    px = np.asarray(pixel, dtype=np.float64)
    z = np.asarray(depth, dtype=np.float64)
    if np.any(z <= 0):
        raise NonPositiveDepth("depth must be positive")
    x = (px[..., 0] - k.cx) / k.fx * z
    y = (px[..., 1] - k.cy) / k.fy * z
    return np.stack(np.broadcast_arrays(x, y, z), axis=-1)


def unproject_depth_map(depth, k):
    """Camera-frame point for every pixel of an H x W depth map (invalid pixels give z=0)."""
    depth = np.asarray(depth, dtype=np.float64)
    v, u = np.mgrid[0:depth.shape[0], 0:depth.shape[1]].astype(np.float64)
    x = (u - k.cx) / k.fx * depth
    y = (v - k.cy) / k.fy * depth
    return np.stack([x, y, depth], axis=-1)


def disparity_to_depth(d, fx, baseline, d_min=MIN_DISPARITY):
    """Convert disparity in pixels to metric depth; disparities at or below ``d_min`` give 0 (invalid).

    Accepts scalars or arrays and returns the same kind.
    """
    if not (fx > 0 and baseline > 0):
        raise ValueError("fx and baseline must be positive")
    d = np.asarray(d, dtype=np.float64)
    ok = np.isfinite(d) & (d > d_min)
    z = np.where(ok, fx * baseline / np.where(ok, d, 1.0), 0.0)
    return float(z) if z.ndim == 0 else z


def depth_to_disparity(z, fx, baseline):
    z = np.asarray(z, dtype=np.float64)
    ok = z > 0
    d = np.where(ok, fx * baseline / np.where(ok, z, 1.0), 0.0)
    return float(d) if d.ndim == 0 else d


def transform_point(p, pose):
    """Apply ``pose`` to point(s) of shape (..., 3)."""
    p = np.asarray(p, dtype=np.float64)
    return p @ pose.rotation.T + pose.translation


def rotation_about_axis(axis, angle):
    """Rodrigues rotation matrix for ``angle`` radians about ``axis``."""
    a = np.asarray(axis, dtype=np.float64)
    a = a / np.linalg.norm(a)
    K = np.array([[0.0, -a[2], a[1]], [a[2], 0.0, -a[0]], [-a[1], a[0], 0.0]])
    R = np.eye(3) + np.sin(angle) * K + (1.0 - np.cos(angle)) * (K @ K)
    # re-orthonormalise to keep RigidPose's 1e-9 invariant after many compositions
    u, _, vt = np.linalg.svd(R)
    return u @ vt


def look_at(eye, target, up=(0.0, 0.0, 1.0)):
    """Camera-to-world pose at ``eye`` whose +z axis points at ``target`` and +y points away from ``up``."""
    eye = np.asarray(eye, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - eye
    forward /= np.linalg.norm(forward)
    up = np.asarray(up, dtype=np.float64)
    right = np.cross(forward, up)
    if np.linalg.norm(right) < 1e-9:
        # looking along the up vector: any horizontal right axis will do
        right = np.cross(forward, (0.0, 1.0, 0.0))
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    R = np.stack([right, down, forward], axis=1)
    u, _, vt = np.linalg.svd(R)
    return RigidPose(u @ vt, eye)
