"""Config-driven pipeline: lift -> associate -> fuse -> train -> export -> evaluate.

Every stage writes its artifacts under the output directory and later stages
read them back from disk, so a single stage can be rerun on its own.
"""

from __future__ import annotations

import json
import logging
import os
import re
import shutil
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from streetfuse import io
from streetfuse.errors import ConfigError, EmptyCloud, IoError, NoValidFrames, StageError, StreetFuseError
from streetfuse.evaluate import (
    implied_poses,
    match_objects,
    trajectory_error,
    write_error_csv,
    write_histogram_csv,
    write_summary_csv,
)
from streetfuse.fuse import CanonicalObject, FrameStatus, FuseParams, fuse_object
from streetfuse.lift import (
    ASSOCIATION_MIN_SHARED,
    MIN_SURVIVORS,
    LidarFrame,
    PartialObjectCloud,
    associate_views,
    lift_mask,
    merge_group_partials,
    remove_outliers,
)
from streetfuse.motionfield import GaussianSet, HexPlaneField, deform_points, save_field
from streetfuse.train import SupervisionSet, TrainConfig, field_bounds_for, train_field, write_loss_csv

log = logging.getLogger("streetfuse")

STAGES = ("lift", "fuse", "train", "eval")
FRAME_PLY = re.compile(r"^frame_(\d+)\.ply$")


@dataclass
class LiftConfig:
    outlier_k: float = 2.0
    min_points: int = MIN_SURVIVORS
    association_min_shared: int = ASSOCIATION_MIN_SHARED


@dataclass
class FieldConfig:
    enabled: bool = True
    resolution: int = 64
    feature_dim: int = 32
    hidden: int = 64
    out_dim: int = 64
    scales: tuple = (1, 2, 4)
    time_resolution: int | None = None
    plane_init: str = "ones"
    margin: float = 0.5
    max_points: int = 2000
    anchor: str = "middle"


@dataclass
class EvalConfig:
    export_times: list = field(default_factory=list)
    hist_bins: int = 20


@dataclass
class PipelineConfig:
    root: Path
    calibration: Path
    lidar_dir: Path
    mask_dir: Path
    mask_index: Path | None
    frames: list | None
    ground_truth: Path | None
    out_dir: Path
    seed: int
    workers: int
    lift: LiftConfig
    fuse: FuseParams
    field: FieldConfig
    train: TrainConfig
    eval: EvalConfig


def _section(cls, doc: dict, name: str, **extra):
    raw = doc.get(name, {}) or {}
    if not isinstance(raw, dict):
        raise ConfigError(f"section {name!r} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"{name}: unknown keys {unknown}")
    try:
        return cls(**{**raw, **extra})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: {exc}") from exc


def load_config(path, seed: int | None = None, out: str | None = None) -> PipelineConfig:
    """Parse and validate a run config; relative paths resolve against its directory."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    root = path.parent.resolve()
    inputs = doc.get("inputs")
    if not isinstance(inputs, dict):
        raise ConfigError("missing 'inputs' section")

    def resolve(key, required=True, kind="file"):
        value = inputs.get(key)
        if value is None:
            if required:
                raise ConfigError(f"inputs.{key} is required")
            return None
        p = Path(value)
        p = p if p.is_absolute() else root / p
        ok = p.is_file() if kind == "file" else p.is_dir()
        if not ok:
            raise ConfigError(f"inputs.{key}: {kind} {p} does not exist")
        return p

    calibration = resolve("calibration")
    lidar_dir = resolve("lidar_dir", kind="dir")
    mask_dir = resolve("mask_dir", kind="dir")
    mask_index = resolve("mask_index", required=False)
    if mask_index is None and (mask_dir / "index.json").is_file():
        mask_index = mask_dir / "index.json"
    ground_truth = resolve("ground_truth", required=False, kind="dir")
    frames = inputs.get("frames")
    if frames is not None:
        if not isinstance(frames, list) or not all(isinstance(t, int) for t in frames):
            raise ConfigError("inputs.frames must be a list of integers")
        frames = sorted(set(frames))

    outputs = doc.get("outputs", {}) or {}
    out_value = out if out is not None else outputs.get("dir", "out")
    out_dir = Path(out_value)
    out_dir = out_dir if out_dir.is_absolute() else (Path.cwd() / out_dir if out is not None else root / out_dir)

    run_seed = int(seed if seed is not None else doc.get("seed", 0))
    train_raw = dict(doc.get("train", {}) or {})
    train_raw.setdefault("seed", run_seed)
    if seed is not None:
        train_raw["seed"] = run_seed
    field_cfg = _section(FieldConfig, doc, "field")
    field_cfg.scales = tuple(int(s) for s in field_cfg.scales)
    if field_cfg.anchor not in ("middle", "first"):
        raise ConfigError(f"field.anchor must be 'middle' or 'first', got {field_cfg.anchor!r}")
    eval_cfg = _section(EvalConfig, doc, "eval")
    if not all(isinstance(t, (int, float)) for t in eval_cfg.export_times):
        raise ConfigError("eval.export_times must be numbers")
    workers = doc.get("workers", min(4, os.cpu_count() or 1))
    if not isinstance(workers, int) or workers < 1:
        raise ConfigError("workers must be a positive integer")
    return PipelineConfig(
        root=root,
        calibration=calibration,
        lidar_dir=lidar_dir,
        mask_dir=mask_dir,
        mask_index=mask_index,
        frames=frames,
        ground_truth=ground_truth,
        out_dir=out_dir,
        seed=run_seed,
        workers=workers,
        lift=_section(LiftConfig, doc, "lift"),
        fuse=_section(FuseParams, doc, "fuse"),
        field=field_cfg,
        train=_section(TrainConfig, {"train": train_raw}, "train"),
        eval=eval_cfg,
    )


# -- inputs ------------------------------------------------------------------


def lidar_frames(cfg: PipelineConfig) -> dict:
    found = {}
    for name in sorted(os.listdir(cfg.lidar_dir)):
        m = FRAME_PLY.match(name)
        if m:
            found[int(m.group(1))] = cfg.lidar_dir / name
    frames = cfg.frames if cfg.frames is not None else sorted(found)
    missing = [t for t in frames if t not in found]
    if missing:
        raise IoError(f"no LiDAR file for frames {missing[:5]} in {cfg.lidar_dir}")
    return {t: found[t] for t in frames}


def mask_paths(cfg: PipelineConfig) -> dict:
    index = io.read_mask_index(cfg.mask_index) if cfg.mask_index is not None else io.scan_mask_dir(cfg.mask_dir)
    return dict(sorted(index.items()))


# -- stages ------------------------------------------------------------------


def _lift_one(job):
    cloud_path, cam, t, key, mask_path, lift_cfg = job
    mask = io.read_pgm(mask_path)
    lidar = LidarFrame(t, io.read_cloud_ply(cloud_path))
    partial = lift_mask(lidar, mask, cam, key[0], key[1])
    if len(partial.cloud) == 0:
        return None
    try:
        return remove_outliers(partial, lift_cfg.outlier_k, lift_cfg.min_points)
    except EmptyCloud:
        return None


def stage_lift(cfg: PipelineConfig) -> list:
    """Lift every mask, drop outliers, group tracks across cameras; writes ``lift/``."""
    cams = io.read_calibration(cfg.calibration)
    clouds = lidar_frames(cfg)
    jobs = []
    for (obj, cam_id, t), mpath in mask_paths(cfg).items():
        if t not in clouds:
            continue
        if cam_id not in cams:
            raise StageError("lift", f"mask {mpath.name} refers to unknown camera {cam_id}")
        jobs.append((clouds[t], cams[cam_id], t, (obj, cam_id), mpath, cfg.lift))
    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        partials = [p for p in pool.map(_lift_one, jobs) if p is not None]
    groups = associate_views(partials, cfg.lift.association_min_shared)
    lift_dir = cfg.out_dir / "lift"
    if lift_dir.exists():
        shutil.rmtree(lift_dir)
    lift_dir.mkdir(parents=True)
    meta = []
    for oid, group in enumerate(groups):
        merged = merge_group_partials(partials, group, oid)
        d = lift_dir / f"object_{oid}"
        d.mkdir()
        for t, p in merged.items():
            io.write_cloud_ply(d / f"frame_{t:04d}.ply", p.cloud)
        meta.append({"object": oid, "tracks": [list(k) for k in group], "frames": sorted(merged)})
    (lift_dir / "groups.json").write_text(json.dumps(meta, indent=1) + "\n")
    log.info("lift: %d partial clouds, %d objects", len(partials), len(groups))
    return meta


def read_lift(cfg: PipelineConfig) -> dict:
    """Object id -> ``{t: PartialObjectCloud}`` from a previous lift stage."""
    lift_dir = cfg.out_dir / "lift"
    try:
        meta = json.loads((lift_dir / "groups.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise StageError("fuse", f"lift outputs missing in {lift_dir}: {exc}") from exc
    out = {}
    for entry in meta:
        oid = entry["object"]
        d = lift_dir / f"object_{oid}"
        out[oid] = {t: PartialObjectCloud(oid, -1, t, io.read_cloud_ply(d / f"frame_{t:04d}.ply")) for t in entry["frames"]}
    return out


def _fuse_one(job):
    oid, partials, frames, params = job
    try:
        return fuse_object(partials, oid, params, frames=frames)
    except NoValidFrames as exc:
        log.warning("fuse: dropping object %d: %s", oid, exc)
        return None


def stage_fuse(cfg: PipelineConfig) -> list:
    """Per-object ICP fusion; writes ``object_<id>/canonical.ply`` and ``trajectory.json``."""
    lifted = read_lift(cfg)
    frames = list(lidar_frames(cfg))
    for d in sorted(cfg.out_dir.glob("object_*")):
        shutil.rmtree(d)
    jobs = [(oid, lifted[oid], frames, cfg.fuse) for oid in sorted(lifted)]
    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        results = list(pool.map(_fuse_one, jobs))
    kept = []
    for obj in results:
        if obj is None:
            continue
        if len(obj.canonical_cloud) <= cfg.fuse.min_object_points:
            log.warning("fuse: dropping object %d with %d canonical points", obj.object_id, len(obj.canonical_cloud))
            continue
        write_object(cfg.out_dir / f"object_{obj.object_id}", obj)
        kept.append(obj)
    log.info("fuse: %d objects kept", len(kept))
    return kept


def write_object(directory: Path, obj: CanonicalObject) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    io.write_cloud_ply(directory / "canonical.ply", obj.canonical_cloud)
    io.write_trajectory(directory / "trajectory.json", obj.trajectory_records())


def read_objects(out_dir: Path, stage: str) -> list:
    objs = []
    for d in sorted(out_dir.glob("object_*"), key=lambda p: int(p.name.split("_")[1])):
        try:
            cloud = io.read_cloud_ply(d / "canonical.ply")
            records = io.read_trajectory(d / "trajectory.json")
        except IoError as exc:
            raise StageError(stage, str(exc)) from exc
        obj = CanonicalObject(int(d.name.split("_")[1]), cloud)
        for t, status, pose in records:
            obj.status[t] = FrameStatus(status)
            if pose is not None:
                obj.poses[t] = pose
        objs.append(obj)
    return objs


def supervision_for(cfg: PipelineConfig, objects) -> SupervisionSet:
    return SupervisionSet.from_canonical(objects, cfg.field.max_points, cfg.seed, cfg.field.anchor)


def build_field(cfg: PipelineConfig, sup: SupervisionSet) -> HexPlaneField:
    frames = list(lidar_frames(cfg))
    bounds, time_range = field_bounds_for(sup, cfg.field.margin, (frames[0], max(frames[-1], frames[0] + 1)))
    f = cfg.field
    return HexPlaneField.create(bounds, time_range, f.resolution, f.feature_dim, f.hidden, f.out_dim, f.scales,
                                cfg.seed, f.plane_init, True, f.time_resolution)


def export_deformed(field: HexPlaneField, points, times, out_dir) -> list:
    """One PLY per time with deformed centers and colors; returns the written paths."""
    times = list(times)
    if not times:
        return []
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create {out_dir}: {exc}") from exc
    base = points if isinstance(points, GaussianSet) else GaussianSet.from_centers(np.asarray(points, dtype=np.float64))
    written = []
    for t in times:
        g = deform_points(field, base, t)
        cols = {"x": g.centers[:, 0], "y": g.centers[:, 1], "z": g.centers[:, 2],
                "red": g.colors[:, 0], "green": g.colors[:, 1], "blue": g.colors[:, 2]}
        path = out_dir / f"deformed_t{_time_label(t)}.ply"
        io.write_ply(path, cols)
        written.append(path)
    return written


def _time_label(t) -> str:
    return f"{int(t):04d}" if float(t).is_integer() else repr(float(t)).replace(".", "p")


def stage_train(cfg: PipelineConfig):
    """Fit the motion field to fused trajectories; writes ``field.hexp``, ``loss.csv`` and field poses."""
    objects = read_objects(cfg.out_dir, "train")
    if not objects:
        raise StageError("train", "no fused objects to supervise")
    sup = supervision_for(cfg, objects)
    field_ = build_field(cfg, sup)
    field_, records = train_field(field_, sup, cfg.train)
    save_field(field_, cfg.out_dir / "field.hexp")
    write_loss_csv(cfg.out_dir / "loss.csv", records)
    frames = list(lidar_frames(cfg))
    for so in sup.objects:
        poses = implied_poses(field_, so, frames)
        io.write_trajectory(cfg.out_dir / f"object_{so.object_id}" / "field_trajectory.json",
                            [(t, "Field", poses[t]) for t in sorted(poses)])
    deformed = cfg.out_dir / "deformed"
    if deformed.exists():
        shutil.rmtree(deformed)
    export_deformed(field_, sup.all_points(), cfg.eval.export_times, deformed)
    log.info("train: final loss %.6g", records[-1].total if records else float("nan"))
    return field_, records


def read_ground_truth(gt_dir: Path) -> dict:
    """Object id -> ``(poses, visible frames, shape cloud)``."""
    out = {}
    for d in sorted(Path(gt_dir).glob("object_*"), key=lambda p: int(p.name.split("_")[1])):
        records = io.read_trajectory(d / "trajectory.json")
        poses = {t: p for t, _, p in records if p is not None}
        visible = [t for t, s, p in records if p is not None and s != "Hidden"]
        shape = io.read_cloud_ply(d / "shape.ply") if (d / "shape.ply").is_file() else None
        out[int(d.name.split("_")[1])] = (poses, visible, shape)
    return out


def _est_centroid(obj: CanonicalObject) -> tuple:
    t0 = min(obj.poses)
    return t0, obj.poses[t0].apply(obj.canonical_cloud.centroid()[None, :])[0]


def evaluate_dirs(est_dir, gt_dir, out_dir, hist_bins: int = 20) -> list:
    """Compare every estimated object against its matched ground-truth object.

    Writes per-object error and histogram CSVs plus ``summary.csv``; returns
    ``(est id, gt id, kind, TrajectoryError)`` rows where ``kind`` is
    ``"fused"`` or ``"field"``.
    """
    est_dir, out_dir = Path(est_dir), Path(out_dir)
    objects = [o for o in read_objects(est_dir, "eval") if o.poses]
    gt = read_ground_truth(gt_dir)
    if not gt:
        raise StageError("eval", f"no ground-truth objects under {gt_dir}")
    est_c = {o.object_id: _est_centroid(o) for o in objects}
    pairing = match_objects(est_c, {gid: (poses, shape) for gid, (poses, _, shape) in gt.items()}, _gt_centroid_at)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for o in objects:
        gid = pairing.get(o.object_id)
        if gid is None:
            log.warning("eval: object %d has no ground-truth match", o.object_id)
            continue
        poses, visible, _ = gt[gid]
        kinds = [("fused", o.poses)]
        fpath = est_dir / f"object_{o.object_id}" / "field_trajectory.json"
        if fpath.is_file():
            kinds.append(("field", {t: p for t, _, p in io.read_trajectory(fpath) if p is not None}))
        for kind, est_poses in kinds:
            err = trajectory_error(est_poses, poses, visible, center=o.canonical_cloud.centroid())
            stem = f"object_{o.object_id}_{kind}"
            write_error_csv(out_dir / f"{stem}_errors.csv", err)
            write_histogram_csv(out_dir / f"{stem}_histogram.csv", err, hist_bins)
            rows.append((o.object_id, gid, kind, err))
    write_summary_csv(out_dir / "summary.csv", [(f"{e}->{g}:{k}", err) for e, g, k, err in rows])
    return rows


def _gt_centroid_at(gt_entry, t):
    poses, shape = gt_entry
    if t not in poses:
        return None
    local = shape.centroid() if shape is not None else np.zeros(3)
    return poses[t].apply(local[None, :])[0]


def stage_eval(cfg: PipelineConfig) -> list:
    if cfg.ground_truth is None:
        log.info("eval: no ground truth configured, skipping")
        return []
    eval_dir = cfg.out_dir / "eval"
    if eval_dir.exists():
        shutil.rmtree(eval_dir)
    return evaluate_dirs(cfg.out_dir, cfg.ground_truth, eval_dir, cfg.eval.hist_bins)


def run_pipeline(config_path, stage: str | None = None, seed: int | None = None, out: str | None = None) -> PipelineConfig:
    """Run all stages (or one); raises ConfigError before touching the output directory."""
    if stage is not None and stage not in STAGES:
        raise ConfigError(f"unknown stage {stage!r}; expected one of {', '.join(STAGES)}")
    cfg = load_config(config_path, seed=seed, out=out)
    try:
        cfg.out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create output directory {cfg.out_dir}: {exc}") from exc
    todo = STAGES if stage is None else (stage,)
    runners = {"lift": stage_lift, "fuse": stage_fuse, "eval": stage_eval}
    for name in todo:
        if name == "train":
            if cfg.field.enabled:
                _guard(name, stage_train, cfg)
            continue
        _guard(name, runners[name], cfg)
    (cfg.out_dir / "run.json").write_text(json.dumps(_run_record(cfg, todo), indent=1) + "\n")
    return cfg


def _guard(name, fn, cfg):
    try:
        return fn(cfg)
    except (StageError, IoError):
        raise
    except StreetFuseError as exc:
        raise StageError(name, str(exc)) from exc


def _run_record(cfg: PipelineConfig, stages) -> dict:
    train = asdict(cfg.train)
    fld = asdict(cfg.field)
    fld["scales"] = list(fld["scales"])
    return {"stages": list(stages), "seed": cfg.seed, "train": train, "field": fld, "fuse": asdict(cfg.fuse),
            "lift": asdict(cfg.lift)}
