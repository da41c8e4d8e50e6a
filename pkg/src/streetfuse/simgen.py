"""Synthetic scenes with known rigid trajectories, simulated LiDAR and masks.

LiDAR is simulated by sampling the surfaces that face the sensor (no
inter-object occlusion). Masks are filled silhouettes of each object's
projection, dilated by a 3x3 kernel ``mask_dilation`` times.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.spatial import ConvexHull, QhullError
from skimage.draw import polygon as fill_polygon

from streetfuse import io
from streetfuse.errors import InvalidSpec
from streetfuse.geom import CameraModel, PointCloud, RigidPose, rotation_about_axis, rotation_z
from streetfuse.lift import LidarFrame

BACKGROUND = -1

_BOX_FACES = (
    # (axis, sign)
    (0, 1.0), (0, -1.0), (1, 1.0), (1, -1.0), (2, 1.0), (2, -1.0),
)


# -- shapes -----------------------------------------------------------------


def _segment_hits_box(origin: np.ndarray, ends: np.ndarray, half: np.ndarray, center=None) -> np.ndarray:
    """True where the segment ``origin -> ends[i]`` enters the box before its end.

    Slab test in the box frame; an endpoint lying on the surface is not hit.
    """
    c = np.zeros(3) if center is None else center
    o = origin - c
    d = ends - origin
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t1 = (-half - o) * inv
        t2 = (half - o) * inv
    lo = np.where(np.isnan(t1), -np.inf, np.minimum(t1, t2))
    hi = np.where(np.isnan(t1), np.inf, np.maximum(t1, t2))
    # rays parallel to a slab miss unless the origin lies inside it
    flat = d == 0
    outside = flat & (np.abs(o) > half)
    t_in = lo.max(axis=1)
    t_out = hi.min(axis=1)
    return ~outside.any(axis=1) & (t_in <= t_out) & (t_in > 0.0) & (t_in < 1.0 - 1e-9)


class Shape:
    kind = "shape"

    def surface_samples(self, n: int, rng) -> tuple:
        """``(points, normals)`` in the object frame."""
        raise NotImplementedError

    def dense_points(self) -> np.ndarray:
        raise NotImplementedError

    def sample_visible(self, pose: RigidPose, sensor: np.ndarray, density: float, rng) -> np.ndarray:
        raise NotImplementedError

    def blocks(self, pose: RigidPose, sensor: np.ndarray, points: np.ndarray) -> np.ndarray:
        """Mask of ``points`` (world) whose line of sight from ``sensor`` passes through the shape."""
        raise NotImplementedError


@dataclass
class Box(Shape):
    size: np.ndarray
    kind = "box"

    def __post_init__(self):
        self.size = np.asarray(self.size, dtype=np.float64).reshape(3)

    def corners(self) -> np.ndarray:
        h = self.size / 2.0
        return np.array([[sx * h[0], sy * h[1], sz * h[2]] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)])

    def dense_points(self, spacing: float = 0.1) -> np.ndarray:
        h = self.size / 2.0
        pts = [self.corners()]
        for axis, sign in _BOX_FACES:
            u, v = [a for a in range(3) if a != axis]
            gu = np.linspace(-h[u], h[u], max(2, int(np.ceil(self.size[u] / spacing)) + 1))
            gv = np.linspace(-h[v], h[v], max(2, int(np.ceil(self.size[v] / spacing)) + 1))
            U, V = np.meshgrid(gu, gv, indexing="ij")
            face = np.zeros((U.size, 3))
            face[:, u] = U.ravel()
            face[:, v] = V.ravel()
            face[:, axis] = sign * h[axis]
            pts.append(face)
        return np.concatenate(pts)

    def sample_visible(self, pose, sensor, density, rng):
        h = self.size / 2.0
        local_sensor = pose.inverse().apply(sensor)
        out = []
        for axis, sign in _BOX_FACES:
            if sign * local_sensor[axis] <= h[axis]:
                continue
            u, v = [a for a in range(3) if a != axis]
            n = int(round(self.size[u] * self.size[v] * density))
            if n == 0:
                continue
            face = np.empty((n, 3))
            face[:, u] = rng.uniform(-h[u], h[u], n)
            face[:, v] = rng.uniform(-h[v], h[v], n)
            face[:, axis] = sign * h[axis]
            out.append(face)
        if not out:
            return np.zeros((0, 3))
        return pose.apply(np.concatenate(out))

    def blocks(self, pose, sensor, points):
        inv = pose.inverse()
        return _segment_hits_box(inv.apply(sensor), inv.apply(points), self.size / 2.0)


@dataclass
class Ellipsoid(Shape):
    radii: np.ndarray
    kind = "ellipsoid"

    def __post_init__(self):
        self.radii = np.asarray(self.radii, dtype=np.float64).reshape(3)

    def area(self) -> float:
        a, b, c = self.radii
        p = 1.6075
        return 4.0 * np.pi * (((a * b) ** p + (a * c) ** p + (b * c) ** p) / 3.0) ** (1.0 / p)

    def _directions(self, n, rng):
        d = rng.normal(size=(n, 3))
        return d / np.linalg.norm(d, axis=1, keepdims=True)

    def dense_points(self) -> np.ndarray:
        return self.radii * self._directions(4000, np.random.default_rng(0))

    def sample_visible(self, pose, sensor, density, rng):
        n = int(round(self.area() * density))
        p = self.radii * self._directions(n, rng)
        normals = p / self.radii ** 2
        local_sensor = pose.inverse().apply(sensor)
        vis = np.einsum("ij,ij->i", normals, local_sensor - p) > 0
        return pose.apply(p[vis])

    def blocks(self, pose, sensor, points):
        inv = pose.inverse()
        o = inv.apply(sensor) / self.radii
        d = inv.apply(points) / self.radii - o
        a = np.einsum("ij,ij->i", d, d)
        b = 2.0 * d @ o
        c = o @ o - 1.0
        disc = b * b - 4.0 * a * c
        with np.errstate(invalid="ignore", divide="ignore"):
            t_in = (-b - np.sqrt(np.maximum(disc, 0.0))) / (2.0 * a)
        return (disc > 0) & (a > 0) & (t_in > 0.0) & (t_in < 1.0 - 1e-9)


@dataclass
class PointShape(Shape):
    """Imported vertex set; every vertex is a candidate LiDAR return."""

    points: np.ndarray
    samples: int = 500
    kind = "ply"

    def dense_points(self) -> np.ndarray:
        return self.points

    def sample_visible(self, pose, sensor, density, rng):
        k = min(self.samples, len(self.points))
        idx = np.sort(rng.choice(len(self.points), size=k, replace=False))
        return pose.apply(self.points[idx])

    def blocks(self, pose, sensor, points):
        # bounding box of the vertex set stands in for the unknown surface
        lo, hi = self.points.min(axis=0), self.points.max(axis=0)
        inv = pose.inverse()
        return _segment_hits_box(inv.apply(sensor), inv.apply(points), (hi - lo) / 2.0, (hi + lo) / 2.0)


# -- trajectories -----------------------------------------------------------


def _yaw_pose(translation, yaw: float) -> RigidPose:
    return RigidPose(rotation_z(yaw), translation)


def make_trajectory(spec: dict, frames, where: str) -> dict:
    kind = spec.get("type", "constant_velocity")
    frames = list(frames)
    if kind == "static":
        pose = _yaw_pose(spec.get("translation", [0.0, 0.0, 0.0]), float(spec.get("yaw", 0.0)))
        return {t: pose for t in frames}
    if kind == "constant_velocity":
        start = np.asarray(spec.get("start", [0.0, 0.0, 0.0]), dtype=np.float64)
        vel = np.asarray(spec.get("velocity", [0.0, 0.0, 0.0]), dtype=np.float64)
        yaw = float(spec.get("yaw", 0.0))
        yaw_rate = float(spec.get("yaw_rate", 0.0))
        if start.shape != (3,) or vel.shape != (3,):
            raise InvalidSpec(f"{where}.start/velocity", "expected 3-vectors")
        return {t: _yaw_pose(start + vel * t, yaw + yaw_rate * t) for t in frames}
    if kind == "circular_arc":
        center = np.asarray(spec["center"], dtype=np.float64)
        radius = float(spec["radius"])
        a0 = float(spec.get("start_angle", 0.0))
        w = float(spec["angular_velocity"])
        z = float(spec.get("z", center[2] if center.size == 3 else 0.0))
        if radius <= 0:
            raise InvalidSpec(f"{where}.radius", "must be positive")
        heading = np.pi / 2.0 if w >= 0 else -np.pi / 2.0
        out = {}
        for t in frames:
            a = a0 + w * t
            out[t] = _yaw_pose([center[0] + radius * np.cos(a), center[1] + radius * np.sin(a), z], a + heading)
        return out
    if kind == "keyframes":
        keys = sorted(spec.get("keys", []), key=lambda k: k["t"])
        if not keys:
            raise InvalidSpec(f"{where}.keys", "at least one keyframe required")
        kt = np.array([k["t"] for k in keys], dtype=np.float64)
        tr = np.array([k["translation"] for k in keys], dtype=np.float64)
        yaw = np.array([k.get("yaw", 0.0) for k in keys], dtype=np.float64)
        out = {}
        for t in frames:
            p = [np.interp(t, kt, tr[:, a]) for a in range(3)]
            out[t] = _yaw_pose(p, float(np.interp(t, kt, yaw)))
        return out
    raise InvalidSpec(f"{where}.type", f"unknown trajectory type {kind!r}")


def make_shape(spec: dict, where: str, base_dir=None) -> Shape:
    kind = spec.get("type", "box")
    if kind == "box":
        size = np.asarray(spec.get("size", [4.5, 1.8, 1.5]), dtype=np.float64)
        if size.shape != (3,) or np.any(size <= 0):
            raise InvalidSpec(f"{where}.size", "expected three positive lengths")
        return Box(size)
    if kind == "ellipsoid":
        radii = np.asarray(spec.get("radii", [2.0, 0.9, 0.75]), dtype=np.float64)
        if radii.shape != (3,) or np.any(radii <= 0):
            raise InvalidSpec(f"{where}.radii", "expected three positive radii")
        return Ellipsoid(radii)
    if kind == "ply":
        path = Path(spec["path"])
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        cloud = io.read_cloud_ply(path)
        if len(cloud) < 10:
            raise InvalidSpec(f"{where}.path", "PLY shape needs at least 10 vertices")
        return PointShape(cloud.points - cloud.points.mean(axis=0), int(spec.get("samples", 500)))
    raise InvalidSpec(f"{where}.type", f"unknown shape type {kind!r}")


def make_camera(spec: dict, where: str) -> CameraModel:
    try:
        w, h = int(spec["width"]), int(spec["height"])
    except KeyError as exc:
        raise InvalidSpec(f"{where}.{exc.args[0]}", "required") from None
    f = float(spec.get("f", w / 2.0))
    fx, fy = float(spec.get("fx", f)), float(spec.get("fy", f))
    if fx <= 0 or fy <= 0:
        raise InvalidSpec(f"{where}.f", "focal length must be positive")
    cx, cy = float(spec.get("cx", (w - 1) / 2.0)), float(spec.get("cy", (h - 1) / 2.0))
    K = np.array([[fx, 0.0, cx], [0.0, fy, cy], [0.0, 0.0, 1.0]])
    pos = np.asarray(spec.get("position", [0.0, 0.0, 1.6]), dtype=np.float64)
    yaw = np.radians(float(spec.get("yaw_deg", 0.0)))
    pitch = np.radians(float(spec.get("pitch_deg", 0.0)))
    # camera axes in world: forward along rotated +x, right along rotated -y, down along -z;
    # positive pitch tilts the view downward
    base = np.array([[0.0, -1.0, 0.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]])
    R_wc = rotation_z(yaw) @ rotation_about_axis([0.0, 1.0, 0.0], pitch)
    R = base @ R_wc.T
    return CameraModel(K, RigidPose(R, -R @ pos), (w, h))


# -- scene ------------------------------------------------------------------


@dataclass
class SimObject:
    object_id: int
    shape: Shape
    trajectory: dict


@dataclass
class SceneTruth:
    objects: list
    cameras: dict
    lidar_frames: dict
    labels: dict
    masks: dict
    frames: list
    seed: int
    track_ids: dict = field(default_factory=dict)
    spec: dict = field(default_factory=dict)

    def object_by_id(self, object_id: int) -> SimObject:
        for o in self.objects:
            if o.object_id == object_id:
                return o
        raise KeyError(object_id)


def standard_scene_spec(seed: int = 0, frames: int = 40) -> dict:
    """Two cars in opposite lanes, three forward cameras, 40 frames."""
    return {
        "seed": seed,
        "frames": frames,
        "objects": [
            {"id": 0, "shape": {"type": "box", "size": [4.5, 1.8, 1.5]},
             "trajectory": {"type": "constant_velocity", "start": [6.0, 6.0, 0.75], "velocity": [0.25, 0.0, 0.0]}},
            {"id": 1, "shape": {"type": "box", "size": [4.2, 1.8, 1.6]},
             "trajectory": {"type": "constant_velocity", "start": [26.0, -6.0, 0.8], "velocity": [-0.25, 0.0, 0.0],
                            "yaw": float(np.pi)}},
        ],
        "cameras": [
            {"id": 0, "width": 480, "height": 270, "f": 240.0, "position": [0.0, 0.0, 1.6], "yaw_deg": 0.0},
            {"id": 1, "width": 480, "height": 270, "f": 240.0, "position": [0.0, 0.0, 1.6], "yaw_deg": 55.0},
            {"id": 2, "width": 480, "height": 270, "f": 240.0, "position": [0.0, 0.0, 1.6], "yaw_deg": -55.0},
        ],
        "lidar": {"origin": [0.0, 0.0, 2.0], "density": 100.0, "max_range": 80.0,
                  "dropout_start": 30.0, "dropout_max": 0.5},
        "ground": {"points": 3000, "x_range": [-5.0, 35.0], "y_range": [-15.0, 15.0]},
        "mask_dilation": 1,
    }


def _validate(spec: dict):
    if not isinstance(spec, dict):
        raise InvalidSpec("spec", "must be a JSON object")
    n_frames = spec.get("frames")
    if not isinstance(n_frames, int) or n_frames < 2:
        raise InvalidSpec("frames", "need an integer >= 2")
    if not spec.get("objects"):
        raise InvalidSpec("objects", "at least one object required")
    if not spec.get("cameras"):
        raise InvalidSpec("cameras", "at least one camera required")
    lidar = spec.get("lidar", {})
    if float(lidar.get("density", 40.0)) <= 0:
        raise InvalidSpec("lidar.density", "must be positive")
    d = spec.get("mask_dilation", 1)
    if not isinstance(d, int) or d < 0:
        raise InvalidSpec("mask_dilation", "must be a non-negative integer")


def silhouette(points_world: np.ndarray, cam: CameraModel, t=None, convex: bool = True) -> np.ndarray:
    """Filled image-space silhouette of a point set (convex hull when ``convex``)."""
    H, W = cam.height, cam.width
    mask = np.zeros((H, W), dtype=bool)
    pc = cam.extrinsics_at(t).apply(points_world)
    front = pc[:, 2] > 1e-3
    if front.sum() < 1:
        return mask
    uv = (pc[front] @ cam.intrinsics.T)
    uv = uv[:, :2] / uv[:, 2:3]
    if convex and len(uv) >= 3:
        try:
            hull = ConvexHull(uv)
            poly = uv[hull.vertices]
            rr, cc = fill_polygon(poly[:, 1], poly[:, 0], shape=(H, W))
            mask[rr, cc] = True
        except QhullError:
            pass
    pix = np.floor(uv + 0.5).astype(np.int64)
    ok = (pix[:, 0] >= 0) & (pix[:, 0] < W) & (pix[:, 1] >= 0) & (pix[:, 1] < H)
    mask[pix[ok, 1], pix[ok, 0]] = True
    return mask


def _dilate(mask: np.ndarray, iterations: int) -> np.ndarray:
    if iterations <= 0 or not mask.any():
        return mask
    return ndimage.binary_dilation(mask, structure=np.ones((3, 3), dtype=bool), iterations=iterations)


def render_object_mask(obj: SimObject, pose: RigidPose, cam: CameraModel, t, dilation: int) -> np.ndarray:
    pts = pose.apply(obj.shape.dense_points())
    return _dilate(silhouette(pts, cam, t, convex=obj.shape.kind != "ply"), dilation)


def generate_scene(spec: dict, base_dir=None) -> SceneTruth:
    """Build a fully seeded synthetic scene from a spec dict (see ``standard_scene_spec``)."""
    _validate(spec)
    spec = copy.deepcopy(spec)
    seed = int(spec.get("seed", 0))
    frames = list(range(int(spec["frames"])))
    objects = []
    seen_ids = set()
    for k, ospec in enumerate(spec["objects"]):
        oid = int(ospec.get("id", k))
        if oid in seen_ids or oid < 0:
            raise InvalidSpec(f"objects[{k}].id", "ids must be unique and non-negative")
        seen_ids.add(oid)
        shape = make_shape(ospec.get("shape", {}), f"objects[{k}].shape", base_dir)
        traj = make_trajectory(ospec.get("trajectory", {}), frames, f"objects[{k}].trajectory")
        objects.append(SimObject(oid, shape, traj))
    cameras = {}
    for k, cspec in enumerate(spec["cameras"]):
        cid = int(cspec.get("id", k))
        if cid in cameras:
            raise InvalidSpec(f"cameras[{k}].id", "duplicate camera id")
        cameras[cid] = make_camera(cspec, f"cameras[{k}]")

    lidar = spec.get("lidar", {})
    origin = np.asarray(lidar.get("origin", [0.0, 0.0, 2.0]), dtype=np.float64)
    density = float(lidar.get("density", 40.0))
    max_range = float(lidar.get("max_range", 80.0))
    d0 = float(lidar.get("dropout_start", max_range))
    dmax = float(lidar.get("dropout_max", 0.0))
    ground = spec.get("ground", {})
    dilation = int(spec.get("mask_dilation", 1))

    lidar_frames, labels, masks = {}, {}, {}
    for t in frames:
        # per-frame stream so frames are independent of each other
        rng = np.random.default_rng([seed, t])
        pts, lab = [], []
        for obj in objects:
            p = obj.shape.sample_visible(obj.trajectory[t], origin, density, rng)
            pts.append(p)
            lab.append(np.full(len(p), obj.object_id, dtype=np.int64))
        n_ground = int(ground.get("points", 0))
        if n_ground:
            gx = rng.uniform(*ground.get("x_range", [-20.0, 20.0]), n_ground)
            gy = rng.uniform(*ground.get("y_range", [-20.0, 20.0]), n_ground)
            pts.append(np.column_stack([gx, gy, np.zeros(n_ground)]))
            lab.append(np.full(n_ground, BACKGROUND, dtype=np.int64))
        P = np.concatenate(pts) if pts else np.zeros((0, 3))
        L = np.concatenate(lab) if lab else np.zeros(0, dtype=np.int64)
        hidden = np.zeros(len(P), dtype=bool)
        for obj in objects:
            hidden |= (L != obj.object_id) & obj.shape.blocks(obj.trajectory[t], origin, P)
        P, L = P[~hidden], L[~hidden]
        rng_range = np.linalg.norm(P - origin, axis=1)
        ramp = np.clip((rng_range - d0) / max(max_range - d0, 1e-9), 0.0, 1.0)
        keep = (rng_range <= max_range) & (rng.uniform(size=len(P)) >= dmax * ramp)
        P, L = P[keep], L[keep]
        ids = rng.permutation(len(P)).astype(np.int64)
        lidar_frames[t] = LidarFrame(t, PointCloud(ids, P))
        labels[t] = L
        for obj in objects:
            for cid, cam in cameras.items():
                m = render_object_mask(obj, obj.trajectory[t], cam, t, dilation)
                if m.any():
                    masks[(obj.object_id, cid, t)] = m
    track_ids = {(o.object_id, cid): 10 * (cid + 1) + o.object_id for o in objects for cid in cameras}
    return SceneTruth(objects, cameras, lidar_frames, labels, masks, frames, seed, track_ids, spec)


def corrupt_tracks(truth: SceneTruth, drop_rate: float = 0.0, pose_noise: float = 0.0, mask_erosion: int = 0,
                   seed: int = 0) -> dict:
    """Degraded copy of ``truth.masks``.

    Each ``(object, camera, frame)`` mask is dropped with probability
    ``drop_rate``. Survivors are re-rendered with the object translated by
    N(0, pose_noise^2) meters per axis when ``pose_noise > 0``, then eroded
    with a square kernel of radius ``mask_erosion``.
    """
    if not 0.0 <= drop_rate < 1.0:
        raise ValueError("drop_rate must lie in [0, 1)")
    rng = np.random.default_rng(seed)
    dilation = int(truth.spec.get("mask_dilation", 1))
    out = {}
    for key in sorted(truth.masks):
        mask = truth.masks[key]
        if rng.uniform() < drop_rate:
            continue
        if pose_noise > 0:
            oid, cid, t = key
            obj = truth.object_by_id(oid)
            noisy = RigidPose(np.eye(3), rng.normal(0.0, pose_noise, 3)) @ obj.trajectory[t]
            mask = render_object_mask(obj, noisy, truth.cameras[cid], t, dilation)
        if mask_erosion > 0:
            # square erosion with zero border, done separably
            k = 2 * mask_erosion + 1
            mask = ndimage.minimum_filter(mask.astype(np.uint8), size=k, mode="constant", cval=0).astype(bool)
        out[key] = mask.copy()
    return out


def mask_tracks(truth: SceneTruth, masks: dict | None = None) -> list:
    """Group masks into per-camera ``MaskTrack`` objects keyed by track id."""
    from streetfuse.lift import MaskTrack

    masks = truth.masks if masks is None else masks
    tracks = {}
    for (oid, cid, t), m in sorted(masks.items()):
        tid = truth.track_ids[(oid, cid)]
        tracks.setdefault((tid, cid), MaskTrack(tid, cid, {})).frames[t] = m
    return [tracks[k] for k in sorted(tracks)]


# field size that trains in minutes on one CPU core
DESK_FIELD = {"resolution": 16, "feature_dim": 8, "time_resolution": 20}


def visible_frames(truth: SceneTruth) -> dict:
    """Object id -> set of frames where the clean masks show it in some camera."""
    seen = {o.object_id: set() for o in truth.objects}
    for oid, _, t in truth.masks:
        seen[oid].add(t)
    return seen


def write_scene(truth: SceneTruth, out_dir, masks: dict | None = None) -> dict:
    """Write the scene in the pipeline's input layout and return the run config."""
    out = Path(out_dir)
    (out / "lidar").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    (out / "gt").mkdir(parents=True, exist_ok=True)
    io.write_calibration(out / "calibration.json", truth.cameras)
    for t, frame in truth.lidar_frames.items():
        io.write_cloud_ply(out / "lidar" / f"frame_{t:04d}.ply", frame.cloud, {"label": truth.labels[t]})
    masks = truth.masks if masks is None else masks
    index = []
    for (oid, cid, t), m in sorted(masks.items()):
        tid = truth.track_ids[(oid, cid)]
        name = io.mask_filename(tid, cid, t)
        io.write_pgm(out / "masks" / name, m)
        index.append({"object": tid, "camera": cid, "frame": t, "path": name})
    (out / "masks" / "index.json").write_text(json.dumps(index, indent=1) + "\n")
    seen = visible_frames(truth)
    for obj in truth.objects:
        d = out / "gt" / f"object_{obj.object_id}"
        d.mkdir(parents=True, exist_ok=True)
        io.write_cloud_ply(d / "shape.ply", PointCloud.from_points(obj.shape.dense_points()))
        io.write_trajectory(d / "trajectory.json",
                            [(t, "Visible" if t in seen[obj.object_id] else "Hidden", obj.trajectory[t])
                             for t in truth.frames])
    (out / "scene.json").write_text(json.dumps(truth.spec, indent=1) + "\n")
    config = {
        "inputs": {"calibration": "calibration.json", "lidar_dir": "lidar", "mask_dir": "masks",
                   "frames": truth.frames, "ground_truth": "gt"},
        "field": dict(DESK_FIELD),
        "outputs": {"dir": "out"},
        "seed": truth.seed,
    }
    (out / "config.json").write_text(json.dumps(config, indent=1) + "\n")
    return config


def load_spec(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidSpec("spec", f"cannot read {path}: {exc}") from exc
