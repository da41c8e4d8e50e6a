"""Rigid transforms, pinhole cameras and point clouds.

Pixel convention: ``(u, v)`` with the origin at the top-left corner, ``u``
rightward and ``v`` downward. A continuous projection lands in pixel
``(floor(u + 0.5), floor(v + 0.5))``; it is inside the image when that pixel
index lies in ``[0, width) x [0, height)``. Depth is measured along the camera
z-axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np


def _as_rotation(R) -> np.ndarray:
    R = np.asarray(R, dtype=np.float64)
    if R.shape != (3, 3):
        raise ValueError(f"rotation must be 3x3, got {R.shape}")
    return R


def rotation_about_axis(axis, angle_rad: float) -> np.ndarray:
    """Rodrigues formula; ``axis`` need not be normalized."""
    axis = np.asarray(axis, dtype=np.float64)
    n = np.linalg.norm(axis)
    if n == 0.0:
        return np.eye(3)
    k = axis / n
    K = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
    return np.eye(3) + np.sin(angle_rad) * K + (1.0 - np.cos(angle_rad)) * (K @ K)


def rotation_z(angle_rad: float) -> np.ndarray:
    c, s = np.cos(angle_rad), np.sin(angle_rad)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def polar_orthonormalize(R) -> np.ndarray:
    """Closest rotation matrix to ``R`` in Frobenius norm."""
    U, _, Vt = np.linalg.svd(np.asarray(R, dtype=np.float64))
    D = np.eye(3)
    D[2, 2] = np.sign(np.linalg.det(U @ Vt)) or 1.0
    return U @ D @ Vt


@dataclass(frozen=True, eq=False)
class RigidPose:
    """SE(3) element acting as ``p -> R @ p + t``."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = _as_rotation(self.rotation).copy()
        t = np.asarray(self.translation, dtype=np.float64).reshape(3).copy()
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidPose":
        return cls()

    @classmethod
    def from_matrix(cls, M) -> "RigidPose":
        M = np.asarray(M, dtype=np.float64)
        return cls(M[:3, :3], M[:3, 3])

    @classmethod
    def from_axis_angle(cls, axis, angle_rad: float, translation=(0.0, 0.0, 0.0)) -> "RigidPose":
        return cls(rotation_about_axis(axis, angle_rad), translation)

    def as_matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.rotation
        M[:3, 3] = self.translation
        return M

    def compose(self, other: "RigidPose") -> "RigidPose":
        """``self @ other``: apply ``other`` first, then ``self``."""
        return RigidPose(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    __matmul__ = compose

    def inverse(self) -> "RigidPose":
        Rt = self.rotation.T
        return RigidPose(Rt, -Rt @ self.translation)

    def apply(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation.T + self.translation

    def orthonormalized(self) -> "RigidPose":
        return RigidPose(polar_orthonormalize(self.rotation), self.translation)

    def rotation_angle(self) -> float:
        """Rotation magnitude in radians."""
        c = (np.trace(self.rotation) - 1.0) / 2.0
        return float(np.arccos(np.clip(c, -1.0, 1.0)))

    def allclose(self, other: "RigidPose", atol: float = 1e-9) -> bool:
        return bool(
            np.allclose(self.rotation, other.rotation, atol=atol, rtol=0)
            and np.allclose(self.translation, other.translation, atol=atol, rtol=0)
        )

    def __repr__(self) -> str:
        return f"RigidPose(angle={np.degrees(self.rotation_angle()):.4f}deg, t={self.translation.tolist()})"


def rotation_angle_deg(a: RigidPose, b: RigidPose) -> float:
    """Geodesic angle between the rotations of two poses, in degrees, in [0, 180]."""
    rel = a.rotation.T @ b.rotation
    c = (np.trace(rel) - 1.0) / 2.0
    return float(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))


@dataclass(eq=False)
class PointCloud:
    """Points with stable integer ids (unique within a cloud)."""

    ids: np.ndarray
    points: np.ndarray

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64).reshape(-1)
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if len(self.ids) != len(self.points):
            raise ValueError(f"{len(self.ids)} ids for {len(self.points)} points")

    @classmethod
    def from_points(cls, points) -> "PointCloud":
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        return cls(np.arange(len(pts), dtype=np.int64), pts)

    @classmethod
    def empty(cls) -> "PointCloud":
        return cls(np.zeros(0, dtype=np.int64), np.zeros((0, 3)))

    def __len__(self) -> int:
        return len(self.ids)

    def subset(self, mask_or_index) -> "PointCloud":
        return PointCloud(self.ids[mask_or_index], self.points[mask_or_index])

    def centroid(self) -> np.ndarray:
        return self.points.mean(axis=0)

    def has_unique_ids(self) -> bool:
        return len(np.unique(self.ids)) == len(self.ids)

    def id_set(self) -> set:
        return set(self.ids.tolist())


def transform_cloud(cloud: PointCloud, pose: RigidPose) -> PointCloud:
    return PointCloud(cloud.ids.copy(), pose.apply(cloud.points))


def merge_clouds(clouds) -> PointCloud:
    """Union by id; the first occurrence of an id wins."""
    clouds = [c for c in clouds if len(c)]
    if not clouds:
        return PointCloud.empty()
    ids = np.concatenate([c.ids for c in clouds])
    pts = np.concatenate([c.points for c in clouds])
    _, first = np.unique(ids, return_index=True)
    first.sort()
    return PointCloud(ids[first], pts[first])


@dataclass(eq=False)
class CameraModel:
    """Pinhole camera.

    ``extrinsics`` maps world to camera coordinates. ``frame_extrinsics``
    optionally overrides it per time index (ego motion); a rig-fixed camera
    leaves it empty.
    """

    intrinsics: np.ndarray
    extrinsics: RigidPose
    image_size: tuple
    frame_extrinsics: dict = field(default_factory=dict)

    def __post_init__(self):
        K = np.asarray(self.intrinsics, dtype=np.float64)
        if K.shape != (3, 3):
            raise ValueError("intrinsics must be 3x3")
        if K[0, 0] <= 0 or K[1, 1] <= 0:
            raise ValueError("focal lengths must be positive")
        if abs(np.linalg.det(K)) < 1e-12:
            raise ValueError("intrinsics not invertible")
        self.intrinsics = K
        w, h = self.image_size
        self.image_size = (int(w), int(h))

    @classmethod
    def simple(cls, f: float, cx: float, cy: float, image_size, extrinsics: Optional[RigidPose] = None):
        K = np.array([[f, 0.0, cx], [0.0, f, cy], [0.0, 0.0, 1.0]])
        return cls(K, extrinsics or RigidPose.identity(), image_size)

    @property
    def width(self) -> int:
        return self.image_size[0]

    @property
    def height(self) -> int:
        return self.image_size[1]

    def extrinsics_at(self, t: Optional[int] = None) -> RigidPose:
        if t is not None and t in self.frame_extrinsics:
            return self.frame_extrinsics[t]
        return self.extrinsics

    def center_at(self, t: Optional[int] = None) -> np.ndarray:
        """Optical center in world coordinates."""
        return self.extrinsics_at(t).inverse().translation


def project_points(points, cam: CameraModel, t: Optional[int] = None):
    """Vectorized projection.

    Returns ``(uv, pixels, valid)``: continuous coordinates ``(N, 2)``, rounded
    integer pixels ``(N, 2)`` and a boolean mask of points in front of the
    camera whose pixel is inside the image.
    """
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    pc = cam.extrinsics_at(t).apply(p)
    z = pc[:, 2]
    front = z > 0.0
    safe_z = np.where(front, z, 1.0)
    proj = pc @ cam.intrinsics.T
    uv = proj[:, :2] / safe_z[:, None]
    with np.errstate(invalid="ignore"):
        pix = np.floor(uv + 0.5)
    finite = np.all(np.isfinite(pix), axis=1)
    pix = np.where(finite[:, None], pix, -1).astype(np.int64)
    valid = (
        front
        & finite
        & (pix[:, 0] >= 0)
        & (pix[:, 0] < cam.width)
        & (pix[:, 1] >= 0)
        & (pix[:, 1] < cam.height)
    )
    return uv, pix, valid


def project(point, cam: CameraModel, t: Optional[int] = None):
    """Pixel ``(u, v)`` of a world point, or ``None`` when outside the frustum."""
    uv, _, valid = project_points(np.asarray(point, dtype=np.float64).reshape(1, 3), cam, t)
    if not valid[0]:
        return None
    return float(uv[0, 0]), float(uv[0, 1])


def unproject(uv, depth: float, cam: CameraModel, t: Optional[int] = None) -> np.ndarray:
    """World point at camera-z ``depth`` seen at continuous pixel ``uv``."""
    ray = np.linalg.solve(cam.intrinsics, np.array([uv[0], uv[1], 1.0]))
    pc = ray * (depth / ray[2])
    return cam.extrinsics_at(t).inverse().apply(pc)


def depth_of(point, cam: CameraModel, t: Optional[int] = None) -> float:
    return float(cam.extrinsics_at(t).apply(np.asarray(point, dtype=np.float64))[2])


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> RigidPose:
    """World->camera extrinsics for a camera at ``eye`` looking at ``target``.

    Camera axes: x right, y down, z forward.
    """
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    fwd /= np.linalg.norm(fwd)
    right = np.cross(fwd, np.asarray(up, dtype=np.float64))
    if np.linalg.norm(right) < 1e-9:
        right = np.cross(fwd, np.array([0.0, 1.0, 0.0]))
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    R = np.stack([right, down, fwd])
    return RigidPose(R, -R @ eye)


def kabsch(src: np.ndarray, dst: np.ndarray) -> RigidPose:
    """Least-squares rigid transform mapping ``src`` onto ``dst`` (paired rows)."""
    cs = src.mean(axis=0)
    cd = dst.mean(axis=0)
    H = (src - cs).T @ (dst - cd)
    U, _, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(Vt.T @ U.T)) or 1.0
    D = np.diag([1.0, 1.0, d])
    R = Vt.T @ D @ U.T
    return RigidPose(R, cd - R @ cs)
