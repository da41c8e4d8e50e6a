"""Trajectory error metrics against ground truth."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from streetfuse.errors import EmptyGroundTruth, OutOfBounds
from streetfuse.geom import kabsch, rotation_angle_deg

TRANSLATION_CLIP = 1.0
ROTATION_CLIP_DEG = 30.0
HIST_BINS = 20


@dataclass
class TrajectoryError:
    """Per-frame clipped errors; frames without an estimate carry the clip values."""

    frames: list
    translation: np.ndarray
    rotation: np.ndarray
    missing_frames: list
    translation_clip: float = TRANSLATION_CLIP
    rotation_clip: float = ROTATION_CLIP_DEG

    @property
    def missing(self) -> int:
        return len(self.missing_frames)

    def summary(self) -> dict:
        out = {"frames": len(self.frames), "missing": self.missing}
        for name, vals in (("translation", self.translation), ("rotation", self.rotation)):
            out[f"{name}_mean"] = float(np.mean(vals))
            out[f"{name}_median"] = float(np.median(vals))
            out[f"{name}_max"] = float(np.max(vals))
        return out

    def histogram(self, kind: str = "translation", bins: int = HIST_BINS):
        """Counts and edges over ``[0, clip]``; values at the clip land in the last bin."""
        vals, clip = (self.translation, self.translation_clip) if kind == "translation" else (self.rotation, self.rotation_clip)
        return np.histogram(vals, bins=bins, range=(0.0, clip))

    def subset(self, frames) -> "TrajectoryError":
        keep = set(frames)
        idx = [k for k, t in enumerate(self.frames) if t in keep]
        return TrajectoryError([self.frames[k] for k in idx], self.translation[idx], self.rotation[idx],
                               [t for t in self.missing_frames if t in keep], self.translation_clip, self.rotation_clip)


def gauge_align(poses: dict, anchor) -> dict:
    """Express canonical->world poses relative to the pose at ``anchor``."""
    back = poses[anchor].inverse()
    return {t: P @ back for t, P in poses.items()}


def _poses_of(est) -> dict:
    return dict(est.poses) if hasattr(est, "poses") else dict(est)


def trajectory_error(est, gt: dict, frames=None, translation_clip: float = TRANSLATION_CLIP,
                     rotation_clip: float = ROTATION_CLIP_DEG, center=None) -> TrajectoryError:
    """Clipped translation (m) and rotation (deg) error on each ground-truth frame.

    ``est`` is a ``CanonicalObject`` or a dict ``t -> RigidPose``. Both
    trajectories are re-expressed relative to the estimate's first recorded
    evaluation frame before comparing, which cancels the arbitrary choice of
    canonical frame.

    Translation error is the displacement mismatch of a reference point that
    sits at ``center`` (canonical coordinates) at the anchor frame. It defaults
    to the canonical cloud centroid for a ``CanonicalObject`` and to the
    canonical origin otherwise. Measuring at the object keeps a small rotation
    error from turning into a large translation error via the lever arm to a
    distant origin.
    """
    frames = sorted(gt if frames is None else frames)
    if not frames:
        raise EmptyGroundTruth("no ground-truth frames to evaluate")
    absent = [t for t in frames if t not in gt]
    if absent:
        raise EmptyGroundTruth(f"ground truth undefined at frames {absent[:5]}")
    est_poses = _poses_of(est)
    if center is None:
        center = est.canonical_cloud.centroid() if hasattr(est, "canonical_cloud") and len(est.canonical_cloud) else np.zeros(3)
    recorded = [t for t in frames if t in est_poses]
    trans = np.full(len(frames), translation_clip)
    rot = np.full(len(frames), rotation_clip)
    if recorded:
        anchor = recorded[0]
        e = gauge_align({t: est_poses[t] for t in recorded}, anchor)
        g = gauge_align({t: gt[t] for t in frames}, anchor)
        ref = est_poses[anchor].apply(np.asarray(center, dtype=np.float64).reshape(1, 3))
        for k, t in enumerate(frames):
            if t in e:
                gap = e[t].apply(ref) - g[t].apply(ref)
                trans[k] = min(float(np.linalg.norm(gap)), translation_clip)
                rot[k] = min(rotation_angle_deg(e[t], g[t]), rotation_clip)
    missing = [t for t in frames if t not in est_poses]
    return TrajectoryError(frames, trans, rot, missing, translation_clip, rotation_clip)


def implied_poses(field, sup_object, frames) -> dict:
    """Canonical->world pose per frame from the best rigid fit to the field's deformation.

    Frames outside the field's time range are skipped.
    """
    X = sup_object.points
    out = {}
    for t in frames:
        try:
            _, dx, _ = field.forward(X, t)
        except OutOfBounds:
            continue
        out[t] = kabsch(X, X + dx) @ sup_object.anchor
    return out


def match_objects(est: dict, gt: dict, gt_centroid_at=None) -> dict:
    """Minimum-distance one-to-one assignment ``est id -> gt id``.

    ``est`` maps ids to ``(t, centroid)``. ``gt`` maps ids to centroids, or to
    anything ``gt_centroid_at(entry, t)`` turns into the centroid at time
    ``t`` (``None`` when unknown). Pairs with no common time are never matched.
    """
    e_ids = sorted(est)
    g_ids = sorted(gt)
    if not e_ids or not g_ids:
        return {}
    big = 1e12
    cost = np.full((len(e_ids), len(g_ids)), big)
    for i, e in enumerate(e_ids):
        t, c = est[e]
        for j, g in enumerate(g_ids):
            gc = gt[g] if gt_centroid_at is None else gt_centroid_at(gt[g], t)
            if gc is not None:
                cost[i, j] = float(np.linalg.norm(np.asarray(c) - np.asarray(gc)))
    rows, cols = linear_sum_assignment(cost)
    return {e_ids[r]: g_ids[c] for r, c in zip(rows, cols) if cost[r, c] < big}


def write_error_csv(path, err: TrajectoryError) -> None:
    missing = set(err.missing_frames)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "recorded", "translation_m", "rotation_deg"])
        for t, a, b in zip(err.frames, err.translation, err.rotation):
            w.writerow([t, int(t not in missing), repr(float(a)), repr(float(b))])


def write_histogram_csv(path, err: TrajectoryError, bins: int = HIST_BINS) -> None:
    tc, te = err.histogram("translation", bins)
    rc, re = err.histogram("rotation", bins)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin", "translation_lo", "translation_hi", "translation_count",
                    "rotation_lo", "rotation_hi", "rotation_count"])
        for k in range(bins):
            w.writerow([k, repr(float(te[k])), repr(float(te[k + 1])), int(tc[k]),
                        repr(float(re[k])), repr(float(re[k + 1])), int(rc[k])])


def write_summary_csv(path, rows) -> None:
    """``rows`` is a list of ``(label, TrajectoryError)``."""
    keys = ["frames", "missing", "translation_mean", "translation_median", "translation_max",
            "rotation_mean", "rotation_median", "rotation_max"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["object"] + keys)
        for label, err in rows:
            s = err.summary()
            w.writerow([label] + [s[k] if isinstance(s[k], int) else repr(s[k]) for k in keys])
