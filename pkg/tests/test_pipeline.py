import json
import os

import numpy as np
import pytest

from streetfuse import io, simgen
from streetfuse.cli import main
from streetfuse.errors import ConfigError
from streetfuse.motionfield import HexPlaneField
from streetfuse.pipeline import export_deformed, load_config, run_pipeline


def small_spec(frames=6):
    return {
        "seed": 2, "frames": frames,
        "objects": [{"id": 0, "shape": {"type": "box", "size": [4.5, 1.8, 1.5]},
                     "trajectory": {"type": "constant_velocity", "start": [8.0, 3.0, 0.75],
                                    "velocity": [0.25, 0.0, 0.0]}}],
        "cameras": [{"id": 0, "width": 160, "height": 90, "f": 80.0, "yaw_deg": 20.0}],
        "lidar": {"origin": [0.0, 0.0, 2.0], "density": 60.0},
        "ground": {"points": 300, "x_range": [0, 20], "y_range": [-5, 10]},
    }


@pytest.fixture()
def scene(tmp_path):
    truth = simgen.generate_scene(small_spec())
    cfg = simgen.write_scene(truth, tmp_path / "scene")
    cfg["train"] = {"iterations": 30, "batch": 256}
    cfg["field"] = {"resolution": 4, "feature_dim": 4, "hidden": 16, "out_dim": 16, "time_resolution": 6}
    cfg["eval"] = {"export_times": [0, 2.5]}
    path = tmp_path / "scene" / "config.json"
    path.write_text(json.dumps(cfg))
    return path


def tree_bytes(root):
    out = {}
    for dirpath, _, names in os.walk(root):
        for n in names:
            p = os.path.join(dirpath, n)
            out[os.path.relpath(p, root)] = open(p, "rb").read()
    return out


def test_full_run_and_outputs(scene):
    assert main(["run", str(scene)]) == 0
    out = scene.parent / "out"
    for name in ("lift/groups.json", "object_0/canonical.ply", "object_0/trajectory.json", "field.hexp", "loss.csv",
                 "object_0/field_trajectory.json", "eval/summary.csv", "deformed/deformed_t0000.ply",
                 "deformed/deformed_t2p5.ply", "run.json"):
        assert (out / name).is_file(), name
    recs = io.read_trajectory(out / "object_0" / "trajectory.json")
    assert [s for _, s, _ in recs] == ["Fused"] * 6
    rows = (out / "eval" / "summary.csv").read_text().splitlines()
    assert len(rows) == 3


def test_reruns_are_byte_identical(scene, tmp_path):
    assert main(["run", str(scene), "--out", str(tmp_path / "a")]) == 0
    assert main(["run", str(scene), "--out", str(tmp_path / "b")]) == 0
    a, b = tree_bytes(tmp_path / "a"), tree_bytes(tmp_path / "b")
    assert sorted(a) == sorted(b)
    assert all(a[k] == b[k] for k in a)


def test_stage_gating(scene):
    assert main(["run", str(scene)]) == 0
    out = scene.parent / "out"
    lift_before = tree_bytes(out / "lift")
    lift_mtime = os.stat(out / "lift" / "groups.json").st_mtime_ns
    (out / "object_0" / "trajectory.json").unlink()
    (out / "field.hexp").write_bytes(b"stale")
    assert main(["run", str(scene), "--stage", "fuse"]) == 0
    assert (out / "object_0" / "trajectory.json").is_file()
    assert os.stat(out / "lift" / "groups.json").st_mtime_ns == lift_mtime
    assert tree_bytes(out / "lift") == lift_before
    assert (out / "field.hexp").read_bytes() == b"stale"


def test_fuse_stage_without_lift_is_stage_failure(scene):
    assert main(["run", str(scene), "--stage", "fuse"]) == 4


def test_missing_mask_dir_is_config_error(scene, tmp_path):
    doc = json.loads(scene.read_text())
    doc["inputs"]["mask_dir"] = "nowhere"
    doc["outputs"] = {"dir": str(tmp_path / "never")}
    bad = scene.parent / "bad.json"
    bad.write_text(json.dumps(doc))
    assert main(["run", str(bad)]) == 2
    assert not (tmp_path / "never").exists()
    with pytest.raises(ConfigError):
        run_pipeline(bad)


@pytest.mark.parametrize("edit", [
    lambda d: d.update({"train": {"bogus": 1}}),
    lambda d: d.update({"inputs": "x"}),
    lambda d: d["inputs"].update({"frames": "all"}),
    lambda d: d.update({"field": {"anchor": "last"}}),
    lambda d: d.update({"train": {"motion_phase_fraction": 2.0}}),
])
def test_bad_configs(scene, edit):
    doc = json.loads(scene.read_text())
    edit(doc)
    scene.write_text(json.dumps(doc))
    with pytest.raises(ConfigError):
        load_config(scene)


def test_unknown_stage_and_unreadable_config(scene, tmp_path):
    assert main(["run", str(scene), "--stage", "render"]) == 2
    (tmp_path / "x.json").write_text("{not json")
    assert main(["run", str(tmp_path / "x.json")]) == 2


def test_missing_lidar_frame_is_io_error(scene):
    os.remove(scene.parent / "lidar" / "frame_0003.ply")
    assert main(["run", str(scene)]) == 3


def test_corrupt_mask_is_io_error(scene):
    first = sorted((scene.parent / "masks").glob("*.pgm"))[0]
    first.write_bytes(b"P5\n3 3\n255\n")
    assert main(["run", str(scene), "--stage", "lift"]) == 3


def test_seed_override_changes_training(scene, tmp_path):
    assert main(["run", str(scene), "--out", str(tmp_path / "a")]) == 0
    assert main(["run", str(scene), "--out", str(tmp_path / "b"), "--seed", "9"]) == 0
    assert (tmp_path / "a" / "field.hexp").read_bytes() != (tmp_path / "b" / "field.hexp").read_bytes()
    assert json.loads((tmp_path / "b" / "run.json").read_text())["train"]["seed"] == 9


def test_gen_and_eval_commands(tmp_path):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps(small_spec(4)))
    assert main(["gen", str(spec), "--out", str(tmp_path / "s"), "--drop-rate", "0.5"]) == 0
    masks = json.loads((tmp_path / "s" / "masks" / "index.json").read_text())
    assert 0 < len(masks) < 4
    assert main(["gen", str(tmp_path / "none.json")]) == 2
    assert main(["eval", str(tmp_path / "nope"), str(tmp_path / "s" / "gt")]) == 3


def test_gradcheck_command(capsys):
    assert main(["gradcheck", "--fields", "1", "--resolution", "2", "--feature-dim", "2"]) == 0
    assert "max_relative_error" in capsys.readouterr().out


def test_export_deformed_identity_and_empty(tmp_path):
    field = HexPlaneField.create(([-1, -1, -1], [1, 1, 1]), (0, 4), resolution=4, feature_dim=4, hidden=8, out_dim=8)
    pts = np.random.default_rng(0).uniform(-1, 1, (20, 3))
    assert export_deformed(field, pts, [], tmp_path / "none") == []
    assert not (tmp_path / "none").exists()
    paths = export_deformed(field, pts, [0, 2, 4], tmp_path / "d")
    assert [p.name for p in paths] == ["deformed_t0000.ply", "deformed_t0002.ply", "deformed_t0004.ply"]
    for p in paths:
        cols = io.read_ply(p)
        np.testing.assert_allclose(np.column_stack([cols["x"], cols["y"], cols["z"]]), pts, atol=1e-6)
