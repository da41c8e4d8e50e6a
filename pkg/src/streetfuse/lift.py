"""Lift 2D mask tracks into per-camera partial object clouds and group views.

LiDAR frames must already be expressed in the world frame (ego motion applied);
only the camera intrinsics and world->camera extrinsics are used to project.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from streetfuse.errors import EmptyCloud, MaskSizeMismatch
from streetfuse.geom import CameraModel, PointCloud, merge_clouds, project_points

MIN_SURVIVORS = 10
ASSOCIATION_MIN_SHARED = 50


@dataclass
class LidarFrame:
    t: int
    cloud: PointCloud


@dataclass
class MaskTrack:
    """One 2D track in one camera; ``frames`` maps time index to a bool mask (H, W)."""

    object_id: int
    camera_id: int
    frames: dict = field(default_factory=dict)

    @property
    def key(self) -> tuple:
        return (self.object_id, self.camera_id)


@dataclass
class PartialObjectCloud:
    object_id: int
    camera_id: int
    t: int
    cloud: PointCloud

    @property
    def key(self) -> tuple:
        return (self.object_id, self.camera_id)


def lift_mask(lidar: LidarFrame, mask, cam: CameraModel, object_id: int = 0, camera_id: int = 0) -> PartialObjectCloud:
    """Select the LiDAR points whose projection falls on a set mask pixel."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (cam.height, cam.width):
        raise MaskSizeMismatch(f"mask is {mask.shape[1]}x{mask.shape[0]}, camera expects {cam.width}x{cam.height}")
    cloud = lidar.cloud
    _, pix, valid = project_points(cloud.points, cam, lidar.t)
    hit = np.zeros(len(cloud), dtype=bool)
    idx = np.flatnonzero(valid)
    hit[idx] = mask[pix[idx, 1], pix[idx, 0]]
    return PartialObjectCloud(object_id, camera_id, lidar.t, cloud.subset(hit))


def outlier_keep_mask(points: np.ndarray, k: float = 2.0, min_points: int = MIN_SURVIVORS) -> np.ndarray:
    """Boolean keep-mask of the centroid-distance rule (one pass).

    Drops points farther from the centroid than ``mean + k * std`` of the
    distances (population std). If fewer than ``min_points`` would survive, the
    ``min_points`` points nearest the centroid are kept instead. Iterating to a
    fixed point was tried and rejected: on elongated objects each pass trims
    the far end again.
    """
    n = len(points)
    keep = np.ones(n, dtype=bool)
    if n <= min_points:
        return keep
    d = np.linalg.norm(points - points.mean(axis=0), axis=1)
    keep = d <= d.mean() + k * d.std()
    if keep.sum() < min_points:
        keep[:] = False
        keep[np.argsort(d, kind="stable")[:min_points]] = True
    return keep


def remove_outliers(partial: PartialObjectCloud, k: float = 2.0, min_points: int = MIN_SURVIVORS) -> PartialObjectCloud:
    if len(partial.cloud) == 0:
        raise EmptyCloud(f"object {partial.object_id} camera {partial.camera_id} t={partial.t}: empty cloud")
    keep = outlier_keep_mask(partial.cloud.points, k, min_points)
    return PartialObjectCloud(partial.object_id, partial.camera_id, partial.t, partial.cloud.subset(keep))


class _UnionFind:
    def __init__(self, keys):
        self.parent = {k: k for k in keys}

    def find(self, k):
        root = k
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[k] != root:
            self.parent[k], k = root, self.parent[k]
        return root

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            # smaller key becomes the root so the result is order independent
            lo, hi = (ra, rb) if ra < rb else (rb, ra)
            self.parent[hi] = lo


def pairwise_overlaps(partials) -> dict:
    """Max shared-id count over common time steps for every pair of tracks."""
    by_t = defaultdict(dict)
    for p in partials:
        if len(p.cloud):
            prev = by_t[p.t].get(p.key)
            ids = p.cloud.id_set()
            by_t[p.t][p.key] = ids if prev is None else prev | ids
    best = {}
    for t in sorted(by_t):
        tracks = by_t[t]
        for a, b in combinations(sorted(tracks), 2):
            shared = len(tracks[a] & tracks[b])
            if shared > best.get((a, b), -1):
                best[(a, b)] = shared
    return best


def associate_views(partials, min_shared: int = ASSOCIATION_MIN_SHARED) -> list:
    """Partition ``(object_id, camera_id)`` tracks into cross-view objects.

    Two tracks are joined when, at some common time step, their clouds share
    strictly more than ``min_shared`` point ids; groups are the transitive
    closure. Groups are sorted internally and by their smallest member.
    """
    partials = list(partials)
    keys = sorted({p.key for p in partials})
    uf = _UnionFind(keys)
    for (a, b), shared in sorted(pairwise_overlaps(partials).items()):
        if shared > min_shared:
            uf.union(a, b)
    groups = defaultdict(list)
    for k in keys:
        groups[uf.find(k)].append(k)
    return sorted((sorted(g) for g in groups.values()), key=lambda g: g[0])


def merge_group_partials(partials, group, object_id: int) -> dict:
    """Per time step, union (by id) the clouds of every track in ``group``."""
    members = set(group)
    by_t = defaultdict(list)
    for p in partials:
        if p.key in members:
            by_t[p.t].append(p.cloud)
    return {
        t: PartialObjectCloud(object_id, -1, t, merge_clouds(clouds)) for t, clouds in sorted(by_t.items())
    }
