"""Time the numba and numpy bilinear kernels side by side.

    python3 benchmarks/bench_kernels.py [--points N] [--repeat R]

Also times one training step of a desk-size field under each backend by
re-importing the package with STREETFUSE_DISABLE_NUMBA set.
"""

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from streetfuse.motionfield import kernels

STEP_SNIPPET = """
import time, numpy as np
from streetfuse import simgen
from streetfuse.motionfield import HexPlaneField
from streetfuse.motionfield.kernels import BACKEND
from streetfuse.train import ObjectSupervision, SupervisionSet, TrainConfig, field_bounds_for, train_field
from streetfuse.geom import RigidPose
pts = simgen.Box([4.5, 1.8, 1.5]).dense_points(0.1)
sup = SupervisionSet([ObjectSupervision(0, pts, {t: RigidPose(np.eye(3), [0.25 * t, 0, 0]) for t in range(40)})])
bounds, tr = field_bounds_for(sup)
f = HexPlaneField.create(bounds, tr, plane_init="ones", **simgen.DESK_FIELD)
train_field(f, sup, TrainConfig(iterations=3, batch=4096))
t0 = time.perf_counter()
train_field(f, sup, TrainConfig(iterations={iters}, batch=4096))
print(BACKEND, (time.perf_counter() - t0) / {iters})
"""


def bench(fn, repeat):
    fn()  # compile / warm caches
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def kernel_table(n_points, repeat, shape=(64, 64, 8)):
    rng = np.random.default_rng(0)
    P = rng.normal(size=shape)
    g0 = rng.uniform(0, shape[0] - 1, n_points)
    g1 = rng.uniform(0, shape[1] - 1, n_points)
    dout = rng.normal(size=(n_points, shape[2]))
    rows = []
    for name, nb, npy in (
        ("gather", lambda: kernels.gather_numba(P, g0, g1), lambda: kernels.gather_numpy(P, g0, g1)),
        ("scatter", lambda: kernels.scatter_numba(np.zeros(shape), g0, g1, dout),
         lambda: kernels.scatter_numpy(np.zeros(shape), g0, g1, dout)),
        ("tv", lambda: kernels.tv_numba(P), lambda: kernels.tv_numpy(P)),
    ):
        a, b = bench(nb, repeat), bench(npy, repeat)
        rows.append({"kernel": name, "numba_ms": 1e3 * a, "numpy_ms": 1e3 * b, "speedup": b / a})
    return rows


def step_time(disable, iters):
    env = dict(os.environ, STREETFUSE_DISABLE_NUMBA="1" if disable else "0")
    out = subprocess.run([sys.executable, "-c", STEP_SNIPPET.replace("{iters}", str(iters))], env=env,
                         capture_output=True, text=True, check=True)
    backend, sec = out.stdout.split()
    return backend, float(sec)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--points", type=int, default=4096)
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--steps", type=int, default=30)
    ap.add_argument("--json", action="store_true")
    args = ap.parse_args()

    rows = kernel_table(args.points, args.repeat)
    steps = [step_time(False, args.steps), step_time(True, args.steps)]
    if args.json:
        print(json.dumps({"kernels": rows, "train_step_s": dict(steps)}, indent=1))
        return
    print(f"{'kernel':<8} {'numba ms':>10} {'numpy ms':>10} {'speedup':>8}   ({args.points} points, 64x64x8 plane)")
    for r in rows:
        print(f"{r['kernel']:<8} {r['numba_ms']:>10.3f} {r['numpy_ms']:>10.3f} {r['speedup']:>7.1f}x")
    print()
    for backend, sec in steps:
        print(f"train step ({backend}): {1e3 * sec:.1f} ms")


if __name__ == "__main__":
    main()
