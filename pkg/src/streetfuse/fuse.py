"""Incremental per-object reconstruction with overlap-gated ICP."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from streetfuse.errors import DegenerateCorrespondences, EmptyCloud, NoValidFrames, TooFewPoints
from streetfuse.geom import PointCloud, RigidPose, kabsch, transform_cloud

MIN_ICP_POINTS = 10


class FrameStatus(str, enum.Enum):
    FUSED = "Fused"
    POSE_ONLY = "PoseOnly"
    REJECTED = "Rejected"
    UNOBSERVED = "Unobserved"

    def __str__(self) -> str:
        return self.value


@dataclass
class FuseParams:
    overlap_radius: float = 0.20
    fuse_threshold: float = 0.30
    reject_threshold: float = 0.10
    dedup_voxel: float = 0.05
    max_correspondence: float = 1.0
    max_iterations: int = 50
    tol_translation: float = 1e-4
    tol_rotation: float = 1e-3
    min_object_points: int = 30


@dataclass
class IcpResult:
    pose: RigidPose
    rms_residual: float
    iterations: int
    overlap: float


@dataclass
class CanonicalObject:
    """Fused cloud in the canonical frame plus canonical->world poses."""

    object_id: int
    canonical_cloud: PointCloud
    poses: dict = field(default_factory=dict)
    status: dict = field(default_factory=dict)
    overlaps: dict = field(default_factory=dict)

    def recorded_frames(self) -> list:
        return sorted(self.poses)

    def trajectory_records(self) -> list:
        return [(t, self.status[t], self.poses.get(t)) for t in sorted(self.status)]


def overlap_ratio(canonical: PointCloud, aligned_partial: PointCloud, radius: float = 0.20, tree=None) -> float:
    """Fraction of ``aligned_partial`` points with a canonical point within ``radius``."""
    if len(canonical) == 0 or len(aligned_partial) == 0:
        raise EmptyCloud("overlap of an empty cloud")
    tree = tree if tree is not None else cKDTree(canonical.points)
    d, _ = tree.query(aligned_partial.points, k=1, distance_upper_bound=radius)
    return float(np.count_nonzero(d <= radius)) / len(aligned_partial)


def icp_align(
    source: PointCloud,
    target: PointCloud,
    init: RigidPose | None = None,
    params: FuseParams | None = None,
    tree=None,
) -> IcpResult:
    """Point-to-point ICP; the returned pose maps ``source`` into ``target``'s frame."""
    params = params or FuseParams()
    if len(source) < MIN_ICP_POINTS or len(target) < MIN_ICP_POINTS:
        raise TooFewPoints(f"ICP needs >= {MIN_ICP_POINTS} points, got {len(source)} / {len(target)}")
    tree = tree if tree is not None else cKDTree(target.points)
    src = source.points
    tgt = target.points
    pose = init or RigidPose.identity()
    iterations = 0
    for iterations in range(1, params.max_iterations + 1):
        moved = pose.apply(src)
        d, j = tree.query(moved, k=1, distance_upper_bound=params.max_correspondence)
        inl = d <= params.max_correspondence
        if np.count_nonzero(inl) < 3:
            raise DegenerateCorrespondences(f"{np.count_nonzero(inl)} inlier pairs at iteration {iterations}")
        delta = kabsch(moved[inl], tgt[j[inl]])
        pose = (delta @ pose).orthonormalized()
        if np.linalg.norm(delta.translation) < params.tol_translation and delta.rotation_angle() < params.tol_rotation:
            break
    moved = pose.apply(src)
    d, _ = tree.query(moved, k=1, distance_upper_bound=params.max_correspondence)
    inl = d <= params.max_correspondence
    rms = float(np.sqrt(np.mean(d[inl] ** 2))) if inl.any() else float("inf")
    overlap = float(np.count_nonzero(d <= params.overlap_radius)) / len(src)
    return IcpResult(pose, rms, iterations, overlap)


def _voxel_keys(points: np.ndarray, voxel: float) -> np.ndarray:
    return np.floor(points / voxel).astype(np.int64)


def dedup_merge(canonical: PointCloud, new_points: np.ndarray, voxel: float, next_id: int, tree=None):
    """Append ``new_points`` that are not within ``voxel`` of the model.

    New points are also thinned among themselves to one per voxel cell (first
    in input order wins). Returns the merged cloud and the next free id.
    """
    if len(canonical):
        tree = tree if tree is not None else cKDTree(canonical.points)
        d, _ = tree.query(new_points, k=1, distance_upper_bound=voxel)
        cand = new_points[~(d < voxel)]
    else:
        cand = np.asarray(new_points, dtype=np.float64)
    if len(cand):
        _, first = np.unique(_voxel_keys(cand, voxel), axis=0, return_index=True)
        cand = cand[np.sort(first)]
    ids = np.arange(next_id, next_id + len(cand), dtype=np.int64)
    merged = PointCloud(np.concatenate([canonical.ids, ids]), np.concatenate([canonical.points, cand]))
    return merged, next_id + len(cand)


def gate(overlap: float, params: FuseParams) -> FrameStatus:
    if overlap > params.fuse_threshold:
        return FrameStatus.FUSED
    if overlap >= params.reject_threshold:
        return FrameStatus.POSE_ONLY
    return FrameStatus.REJECTED


def _frame_items(partials):
    """Normalize input to sorted ``(t, PointCloud)`` pairs."""
    if isinstance(partials, dict):
        items = [(t, getattr(p, "cloud", p)) for t, p in partials.items()]
    else:
        items = [(p.t, p.cloud) for p in partials]
    items.sort(key=lambda it: it[0])
    ts = [t for t, _ in items]
    if len(set(ts)) != len(ts):
        raise ValueError("fuse_object expects one partial per time step")
    return items


def fuse_object(partials, object_id: int = 0, params: FuseParams | None = None, frames=None) -> CanonicalObject:
    """Frame-by-frame fusion of one object's partial clouds.

    ``partials`` is a time-ordered list of ``PartialObjectCloud`` (or a dict
    ``t -> cloud``). ``frames`` lists every time step to report on; steps
    without a partial are marked Unobserved.
    """
    params = params or FuseParams()
    items = _frame_items(partials)
    all_frames = sorted(set(frames) if frames is not None else {t for t, _ in items})
    status = {t: FrameStatus.UNOBSERVED for t in all_frames}
    obj = None
    next_id = 0
    tree = None
    last_pose = None
    for t, cloud in items:
        status.setdefault(t, FrameStatus.UNOBSERVED)
        if len(cloud) == 0:
            continue
        if obj is None:
            if len(cloud) < MIN_ICP_POINTS:
                status[t] = FrameStatus.REJECTED
                continue
            # the first frame is the model as observed; dedup only applies to later merges
            next_id = len(cloud)
            canon = PointCloud(np.arange(next_id, dtype=np.int64), cloud.points.copy())
            obj = CanonicalObject(object_id, canon)
            last_pose = RigidPose.identity()
            obj.poses[t] = last_pose
            obj.overlaps[t] = 1.0
            status[t] = FrameStatus.FUSED
            tree = cKDTree(canon.points)
            continue
        if len(cloud) < MIN_ICP_POINTS:
            status[t] = FrameStatus.REJECTED
            continue
        try:
            res = icp_align(cloud, obj.canonical_cloud, last_pose.inverse(), params, tree=tree)
        except DegenerateCorrespondences:
            status[t] = FrameStatus.REJECTED
            continue
        obj.overlaps[t] = res.overlap
        decision = gate(res.overlap, params)
        status[t] = decision
        if decision is FrameStatus.REJECTED:
            continue
        last_pose = res.pose.inverse()
        obj.poses[t] = last_pose
        if decision is FrameStatus.FUSED:
            aligned = transform_cloud(cloud, res.pose).points
            obj.canonical_cloud, next_id = dedup_merge(obj.canonical_cloud, aligned, params.dedup_voxel, next_id, tree=tree)
            tree = cKDTree(obj.canonical_cloud.points)
    if obj is None:
        raise NoValidFrames(f"object {object_id}: no frame with at least {MIN_ICP_POINTS} points")
    obj.status = dict(sorted(status.items()))
    return obj
