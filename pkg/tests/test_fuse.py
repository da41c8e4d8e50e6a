import numpy as np
import pytest

from streetfuse import simgen
from streetfuse.errors import DegenerateCorrespondences, EmptyCloud, NoValidFrames, TooFewPoints
from streetfuse.fuse import (
    FrameStatus,
    FuseParams,
    dedup_merge,
    fuse_object,
    gate,
    icp_align,
    overlap_ratio,
)
from streetfuse.geom import PointCloud, RigidPose, rotation_angle_deg, transform_cloud


def car_cloud(n=800, seed=0):
    """Dense samples on all faces of a 4.5 x 1.8 x 1.5 box."""
    box = simgen.Box([4.5, 1.8, 1.5])
    rng = np.random.default_rng(seed)
    pts = []
    for sensor in ([10, 0, 0], [-10, 0, 0], [0, 10, 0], [0, -10, 0], [0, 0, 10], [0, 0, -10]):
        pts.append(box.sample_visible(RigidPose.identity(), np.array(sensor, float), 25.0, rng))
    pts = np.concatenate(pts)
    return PointCloud.from_points(pts[rng.choice(len(pts), size=min(n, len(pts)), replace=False)])


def random_motion(rng, max_deg=20.0, max_t=0.3):
    axis = rng.normal(size=3)
    angle = np.radians(rng.uniform(0, max_deg))
    d = rng.normal(size=3)
    return RigidPose.from_axis_angle(axis, angle, d / np.linalg.norm(d) * rng.uniform(0, max_t))


def test_icp_self_alignment():
    c = car_cloud()
    res = icp_align(c, c, RigidPose.identity())
    assert res.pose.allclose(RigidPose.identity(), atol=1e-9)
    assert res.rms_residual < 1e-9
    assert res.overlap == pytest.approx(1.0)


@pytest.mark.parametrize("seed", range(5))
def test_icp_recovers_rigid_motion(seed):
    rng = np.random.default_rng(100 + seed)
    src = car_cloud(600, seed)
    T = random_motion(rng)
    res = icp_align(src, transform_cloud(src, T), RigidPose.identity())
    # target = T(source), so the returned source->target pose is T itself
    assert np.linalg.norm(res.pose.translation - T.translation) < 1e-3
    assert rotation_angle_deg(res.pose, T) < 0.1


def test_icp_front_half_overlap():
    full = car_cloud(1500, 1)
    front = full.subset(full.points[:, 0] > 0)
    noise = RigidPose.from_axis_angle([0, 0, 1], np.radians(0.5), [0.02, -0.01, 0.0])
    res = icp_align(front, full, noise)
    assert overlap_ratio(front, transform_cloud(front, res.pose)) == pytest.approx(1.0)
    # the canonical model only explains the front half of the full car
    assert overlap_ratio(front, transform_cloud(full, res.pose.inverse())) == pytest.approx(0.5, abs=0.1)


def test_icp_errors():
    tiny = PointCloud.from_points(np.zeros((5, 3)))
    big = car_cloud(100)
    with pytest.raises(TooFewPoints):
        icp_align(tiny, big, RigidPose.identity())
    far = transform_cloud(big, RigidPose(np.eye(3), [100.0, 0, 0]))
    with pytest.raises(DegenerateCorrespondences):
        icp_align(far, big, RigidPose.identity())


def test_icp_stops_at_max_iterations():
    rng = np.random.default_rng(0)
    src = car_cloud(400)
    tgt = transform_cloud(src, random_motion(rng))
    res = icp_align(src, tgt, RigidPose.identity(), FuseParams(max_iterations=2))
    assert res.iterations == 2


def test_overlap_examples():
    c = car_cloud(300)
    assert overlap_ratio(c, c) == 1.0
    assert overlap_ratio(c, transform_cloud(c, RigidPose(np.eye(3), [100.0, 0, 0]))) == 0.0
    n = 200
    pts = c.points[:n].copy()
    k = int(0.3 * n)
    pts[k:] += [0.0, 0.0, 50.0]
    assert overlap_ratio(c, PointCloud.from_points(pts)) == pytest.approx(0.30, abs=1.0 / n)
    with pytest.raises(EmptyCloud):
        overlap_ratio(PointCloud.empty(), c)


@pytest.mark.parametrize("overlap,status", [(0.09, FrameStatus.REJECTED), (0.10, FrameStatus.POSE_ONLY),
                                            (0.30, FrameStatus.POSE_ONLY), (0.31, FrameStatus.FUSED),
                                            (0.0999999, FrameStatus.REJECTED), (0.3000001, FrameStatus.FUSED)])
def test_gate_boundaries(overlap, status):
    assert gate(overlap, FuseParams()) is status


def test_dedup_merge():
    canon = PointCloud([0], [[0.0, 0.0, 0.0]])
    new = np.array([[0.01, 0, 0], [1.0, 0, 0], [1.01, 0, 0], [2.0, 0, 0]])
    merged, nxt = dedup_merge(canon, new, 0.05, 1)
    assert merged.ids.tolist() == [0, 1, 2]
    np.testing.assert_array_equal(merged.points[1:], [[1.0, 0, 0], [2.0, 0, 0]])
    assert nxt == 3


def test_static_object_all_identity():
    c = car_cloud(500)
    obj = fuse_object({t: c for t in range(5)})
    assert all(obj.status[t] is FrameStatus.FUSED for t in range(5))
    assert all(obj.poses[t].allclose(RigidPose.identity(), atol=1e-9) for t in range(5))
    assert len(obj.canonical_cloud) <= len(c)


def moving_box_scene(frames=8, velocity=(0.5, 0.0, 0.0)):
    spec = {
        "seed": 3, "frames": frames,
        "objects": [{"id": 0, "shape": {"type": "box", "size": [4.5, 1.8, 1.5]},
                     "trajectory": {"type": "constant_velocity", "start": [6.0, 6.0, 0.75],
                                    "velocity": list(velocity)}}],
        "cameras": [{"id": 0, "width": 64, "height": 48, "f": 40.0, "position": [0, 0, 1.6], "yaw_deg": 45.0}],
        "lidar": {"origin": [0.0, 0.0, 2.0], "density": 100.0},
        "ground": {"points": 0},
    }
    return simgen.generate_scene(spec)


def labeled_partials(truth, oid=0):
    out = {}
    for t in truth.frames:
        c = truth.lidar_frames[t].cloud
        out[t] = c.subset(truth.labels[t] == oid)
    return out


def test_translating_box_recovers_trajectory():
    # single one-sided view per frame, so ICP is good to a few cm rather than mm
    truth = moving_box_scene()
    obj = fuse_object(labeled_partials(truth))
    gt = truth.objects[0].trajectory
    for t in truth.frames:
        assert obj.status[t] is FrameStatus.FUSED
        rel_est = obj.poses[t] @ obj.poses[0].inverse()
        rel_gt = gt[t] @ gt[0].inverse()
        center = gt[0].translation
        assert np.linalg.norm(rel_est.apply(center) - rel_gt.apply(center)) < 3e-2
        assert rotation_angle_deg(rel_est, rel_gt) < 0.5
    steps = [obj.poses[t].translation[0] for t in truth.frames]
    np.testing.assert_allclose(steps, 0.5 * np.arange(len(steps)), atol=3e-2)


def test_injected_distant_object_is_rejected():
    truth = moving_box_scene()
    partials = labeled_partials(truth)
    partials[3] = transform_cloud(partials[3], RigidPose(np.eye(3), [0.0, 60.0, 0.0]))
    obj = fuse_object(partials)
    assert obj.status[3] is FrameStatus.REJECTED
    assert 3 not in obj.poses
    gt = truth.objects[0].trajectory
    for t in (4, 5, 6, 7):
        assert obj.status[t] is FrameStatus.FUSED
        assert abs(obj.poses[t].translation[0] - (gt[t].translation[0] - gt[0].translation[0])) < 3e-2


def test_unobserved_and_small_frames():
    truth = moving_box_scene(5)
    partials = labeled_partials(truth)
    del partials[2]
    partials[3] = partials[3].subset(slice(0, 5))
    obj = fuse_object(partials, frames=range(5))
    assert obj.status[2] is FrameStatus.UNOBSERVED
    assert obj.status[3] is FrameStatus.REJECTED
    assert obj.status[4] is FrameStatus.FUSED


def test_model_growth_is_monotone():
    truth = moving_box_scene()
    partials = labeled_partials(truth)
    sizes = []
    for k in range(1, len(truth.frames) + 1):
        sizes.append(len(fuse_object({t: partials[t] for t in truth.frames[:k]}).canonical_cloud))
    assert sizes == sorted(sizes)


def test_pose_chain_sanity():
    truth = moving_box_scene()
    obj = fuse_object(labeled_partials(truth))
    shape = truth.objects[0].shape.dense_points(0.05)
    gt = truth.objects[0].trajectory
    from scipy.spatial import cKDTree

    for t in truth.frames:
        world = obj.poses[t].apply(obj.canonical_cloud.points)
        d, _ = cKDTree(gt[t].apply(shape)).query(world)
        assert np.mean(d <= 0.20) >= 0.95


def test_fusion_is_deterministic():
    truth = moving_box_scene()
    a = fuse_object(labeled_partials(truth))
    b = fuse_object(labeled_partials(truth))
    np.testing.assert_array_equal(a.canonical_cloud.points, b.canonical_cloud.points)
    np.testing.assert_array_equal(a.canonical_cloud.ids, b.canonical_cloud.ids)
    for t in a.poses:
        np.testing.assert_array_equal(a.poses[t].rotation, b.poses[t].rotation)
        np.testing.assert_array_equal(a.poses[t].translation, b.poses[t].translation)


def test_no_valid_frames():
    with pytest.raises(NoValidFrames):
        fuse_object({0: PointCloud.empty(), 1: PointCloud.from_points(np.zeros((3, 3)))})


def test_duplicate_time_steps_rejected():
    from streetfuse.lift import PartialObjectCloud

    c = car_cloud(50)
    with pytest.raises(ValueError):
        fuse_object([PartialObjectCloud(0, 0, 1, c), PartialObjectCloud(0, 1, 1, c)])
