"""File formats: ASCII PLY, binary PGM masks, calibration and trajectory JSON."""

from __future__ import annotations

import json
import os
import re
from pathlib import Path

import numpy as np

from streetfuse.errors import IoError
from streetfuse.geom import CameraModel, PointCloud, RigidPose

_PLY_TYPES = {
    "float": np.float64,
    "float32": np.float64,
    "double": np.float64,
    "float64": np.float64,
    "int": np.int64,
    "int32": np.int64,
    "uint": np.int64,
    "uchar": np.int64,
    "uint8": np.int64,
    "short": np.int64,
    "ushort": np.int64,
    "char": np.int64,
}


def write_ply(path, columns: dict, types: dict | None = None) -> None:
    """Write an ASCII PLY with one vertex element.

    ``columns`` maps property names to equal-length 1-D arrays; float columns
    are written with 17 significant digits so values round-trip exactly.
    """
    types = types or {}
    names = list(columns)
    n = len(columns[names[0]]) if names else 0
    header = ["ply", "format ascii 1.0", f"element vertex {n}"]
    fmts = []
    arrays = []
    for name in names:
        arr = np.asarray(columns[name])
        if len(arr) != n:
            raise ValueError(f"column {name} has length {len(arr)}, expected {n}")
        ptype = types.get(name) or ("double" if arr.dtype.kind == "f" else "int")
        header.append(f"property {ptype} {name}")
        if ptype in ("float", "double", "float32", "float64"):
            fmts.append("%.17g")
            arrays.append(arr.astype(np.float64))
        else:
            fmts.append("%d")
            arrays.append(arr.astype(np.int64))
    header.append("end_header")
    try:
        with open(path, "w", encoding="ascii", newline="\n") as fh:
            fh.write("\n".join(header) + "\n")
            if n:
                line_fmt = " ".join(fmts)
                cols = [a.tolist() for a in arrays]
                fh.write("\n".join(line_fmt % row for row in zip(*cols)) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_ply(path) -> dict:
    """Read an ASCII PLY vertex element into a dict of numpy columns."""
    try:
        with open(path, "r", encoding="ascii") as fh:
            if fh.readline().strip() != "ply":
                raise IoError(f"{path}: not a PLY file")
            names, dtypes = [], []
            n = None
            in_vertex = False
            while True:
                line = fh.readline()
                if not line:
                    raise IoError(f"{path}: truncated header")
                tok = line.split()
                if not tok or tok[0] in ("comment", "obj_info"):
                    continue
                if tok[0] == "format" and tok[1] != "ascii":
                    raise IoError(f"{path}: only ASCII PLY is supported")
                if tok[0] == "element":
                    in_vertex = tok[1] == "vertex"
                    if in_vertex:
                        n = int(tok[2])
                elif tok[0] == "property" and in_vertex:
                    if tok[1] == "list":
                        raise IoError(f"{path}: list properties not supported on vertices")
                    names.append(tok[2])
                    dtypes.append(_PLY_TYPES.get(tok[1], np.float64))
                elif tok[0] == "end_header":
                    break
            if n is None:
                raise IoError(f"{path}: no vertex element")
            rows = [fh.readline() for _ in range(n)]
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    if n == 0:
        return {name: np.zeros(0, dtype=dt) for name, dt in zip(names, dtypes)}
    try:
        data = np.array([r.split() for r in rows], dtype=np.float64).reshape(n, len(names))
    except ValueError as exc:
        raise IoError(f"{path}: malformed vertex data") from exc
    return {name: data[:, k].astype(dt) for k, (name, dt) in enumerate(zip(names, dtypes))}


def write_cloud_ply(path, cloud: PointCloud, extra: dict | None = None) -> None:
    cols = {"x": cloud.points[:, 0], "y": cloud.points[:, 1], "z": cloud.points[:, 2], "id": cloud.ids}
    cols.update(extra or {})
    write_ply(path, cols)


def read_cloud_ply(path) -> PointCloud:
    cols = read_ply(path)
    for k in ("x", "y", "z"):
        if k not in cols:
            raise IoError(f"{path}: missing property {k}")
    pts = np.stack([cols["x"], cols["y"], cols["z"]], axis=1)
    ids = cols["id"] if "id" in cols else np.arange(len(pts))
    cloud = PointCloud(ids, pts)
    if not cloud.has_unique_ids():
        raise IoError(f"{path}: duplicate point ids")
    return cloud


def write_pgm(path, mask: np.ndarray) -> None:
    """8-bit binary PGM (P5); nonzero pixels are written as 255."""
    img = (np.asarray(mask) != 0).astype(np.uint8) * 255
    h, w = img.shape
    try:
        with open(path, "wb") as fh:
            fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
            fh.write(img.tobytes())
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_pgm(path) -> np.ndarray:
    """Read a P5 PGM as a boolean mask (nonzero = inside)."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    # header: magic, width, height, maxval separated by whitespace, '#' comments allowed
    fields = []
    pos = 0
    while len(fields) < 4:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise IoError(f"{path}: truncated PGM header")
        fields.append(raw[start:pos])
    if fields[0] != b"P5":
        raise IoError(f"{path}: not a binary PGM")
    w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    pos += 1
    nbytes = 2 if maxval > 255 else 1
    body = raw[pos : pos + w * h * nbytes]
    if len(body) != w * h * nbytes:
        raise IoError(f"{path}: truncated PGM data")
    img = np.frombuffer(body, dtype=">u2" if nbytes == 2 else np.uint8).reshape(h, w)
    return img != 0


MASK_NAME = re.compile(r"^mask_(-?\d+)_(-?\d+)_(-?\d+)\.pgm$")


def mask_filename(object_id: int, camera_id: int, frame: int) -> str:
    return f"mask_{object_id}_{camera_id}_{frame}.pgm"


def scan_mask_dir(directory) -> dict:
    """Map ``(object, camera, frame) -> path`` from file names in a directory."""
    directory = Path(directory)
    if not directory.is_dir():
        raise IoError(f"mask directory {directory} does not exist")
    out = {}
    for name in sorted(os.listdir(directory)):
        m = MASK_NAME.match(name)
        if m:
            out[tuple(int(g) for g in m.groups())] = directory / name
    return out


def read_mask_index(path) -> dict:
    """JSON index: list of ``{object, camera, frame, path}`` (paths relative to the index)."""
    path = Path(path)
    try:
        entries = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise IoError(f"cannot read mask index {path}: {exc}") from exc
    if isinstance(entries, dict):
        entries = entries.get("masks", [])
    out = {}
    for e in entries:
        p = Path(e["path"])
        if not p.is_absolute():
            p = path.parent / p
        out[(int(e["object"]), int(e["camera"]), int(e["frame"]))] = p
    return out


def pose_to_rows(pose: RigidPose) -> list:
    """12 floats, row-major ``[R | t]``."""
    return np.hstack([pose.rotation, pose.translation[:, None]]).reshape(-1).tolist()


def pose_from_rows(values) -> RigidPose:
    a = np.asarray(values, dtype=np.float64)
    if a.size != 12:
        raise IoError(f"expected 12 extrinsic values, got {a.size}")
    a = a.reshape(3, 4)
    return RigidPose(a[:, :3], a[:, 3])


def camera_to_json(cam_id: int, cam: CameraModel) -> dict:
    d = {
        "id": int(cam_id),
        "K": cam.intrinsics.reshape(-1).tolist(),
        "extrinsics": pose_to_rows(cam.extrinsics),
        "image_size": [cam.width, cam.height],
    }
    if cam.frame_extrinsics:
        d["frame_extrinsics"] = {str(t): pose_to_rows(p) for t, p in sorted(cam.frame_extrinsics.items())}
    return d


def camera_from_json(d: dict) -> tuple:
    K = np.asarray(d["K"], dtype=np.float64)
    if K.size != 9:
        raise IoError(f"camera {d.get('id')}: K needs 9 values")
    frame_ext = {int(t): pose_from_rows(v) for t, v in d.get("frame_extrinsics", {}).items()}
    cam = CameraModel(K.reshape(3, 3), pose_from_rows(d["extrinsics"]), tuple(d["image_size"]), frame_ext)
    return int(d["id"]), cam


def write_calibration(path, cameras: dict) -> None:
    doc = {"cameras": [camera_to_json(cid, cam) for cid, cam in sorted(cameras.items())]}
    _write_json(path, doc)


def read_calibration(path) -> dict:
    """Camera id -> CameraModel."""
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise IoError(f"cannot read calibration {path}: {exc}") from exc
    cams = doc["cameras"] if isinstance(doc, dict) else doc
    return dict(camera_from_json(c) for c in cams)


def write_trajectory(path, records) -> None:
    """``records``: iterable of ``(t, status, pose or None)``."""
    out = []
    for t, status, pose in records:
        entry = {"t": int(t), "status": str(status)}
        if pose is not None:
            entry["rotation"] = pose.rotation.reshape(-1).tolist()
            entry["translation"] = pose.translation.tolist()
        out.append(entry)
    _write_json(path, out)


def read_trajectory(path) -> list:
    """List of ``(t, status, pose or None)``."""
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise IoError(f"cannot read trajectory {path}: {exc}") from exc
    out = []
    for e in doc:
        pose = None
        if "rotation" in e:
            pose = RigidPose(np.reshape(e["rotation"], (3, 3)), e["translation"])
        out.append((int(e["t"]), e.get("status", "Fused"), pose))
    return out


def _write_json(path, doc) -> None:
    try:
        Path(path).write_text(json.dumps(doc, indent=1) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
