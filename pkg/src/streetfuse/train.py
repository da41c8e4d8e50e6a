"""Fit a HexPlane motion field to tracked object trajectories."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field as dc_field

import numpy as np

from streetfuse.errors import NonFiniteLoss, NoSupervision
from streetfuse.geom import RigidPose
from streetfuse.motionfield.field import HexPlaneField


@dataclass
class TrainConfig:
    iterations: int = 5000
    motion_phase_fraction: float = 0.4
    lambda_motion: float = 1.0
    lambda_tv: float = 0.1
    lambda_color_reg: float = 0.01
    lr_planes: float = 1e-2
    lr_networks: float = 1e-4
    lr_schedule: str = "exponential"
    lr_final_factor: float = 1e-3
    lr_decay_fraction: float = 0.4
    lr_delay_steps: int = 0
    lr_delay_mult: float = 1.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-15
    batch: int = 4096
    # "uniform": independent draws; "shuffled": every frame once per pass, in random order
    frame_sampling: str = "shuffled"
    seed: int = 0
    # photometric terms are not optimized here; kept so configs round-trip
    lambda_rgb: float = 1.0
    lambda_ssim: float = 0.1
    lambda_depth: float = 1.0
    depth_normalization: float = 80.0

    def __post_init__(self):
        if not 0.0 <= self.motion_phase_fraction <= 1.0:
            raise ValueError("motion_phase_fraction must lie in [0, 1]")
        for name in ("lambda_motion", "lambda_tv", "lambda_color_reg"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.lr_schedule not in ("constant", "cosine", "exponential"):
            raise ValueError(f"unknown lr_schedule {self.lr_schedule!r}")
        if self.frame_sampling not in ("uniform", "shuffled"):
            raise ValueError(f"unknown frame_sampling {self.frame_sampling!r}")

    def motion_active(self, it: int) -> bool:
        return it < self.motion_phase_fraction * self.iterations

    def lr_factor(self, it: int) -> float:
        """Multiplier on the base learning rates at iteration ``it``."""
        warm = 1.0
        if self.lr_delay_steps > 0:
            ramp = np.sin(0.5 * np.pi * min(it / self.lr_delay_steps, 1.0))
            warm = self.lr_delay_mult + (1.0 - self.lr_delay_mult) * ramp
        if self.lr_schedule == "constant" or self.iterations <= 1:
            return float(warm)
        if self.lr_schedule == "exponential":
            # log-linear from 1 to lr_final_factor, then held
            horizon = max(1.0, self.lr_decay_fraction * (self.iterations - 1))
            s = min(it / horizon, 1.0)
            return float(warm * self.lr_final_factor ** s)
        c = 0.5 * (1.0 + np.cos(np.pi * it / (self.iterations - 1)))
        return float(warm * (self.lr_final_factor + (1.0 - self.lr_final_factor) * c))


@dataclass
class ObjectSupervision:
    """Points in a reference frame and poses mapping that frame to world.

    ``anchor`` maps the object's canonical frame into the reference frame, so
    a reference-frame pose ``P`` corresponds to the canonical pose ``P @ anchor``.
    """

    object_id: int
    points: np.ndarray
    poses: dict
    anchor: RigidPose = dc_field(default_factory=RigidPose.identity)

    @property
    def valid_frames(self) -> list:
        return sorted(self.poses)

    def targets(self, t: int, idx=None) -> np.ndarray:
        """Rigid displacement ``T_t X - X`` for (a subset of) the points."""
        X = self.points if idx is None else self.points[idx]
        return self.poses[t].apply(X) - X


@dataclass
class SupervisionSet:
    objects: list = dc_field(default_factory=list)

    @classmethod
    def from_canonical(cls, objects, max_points: int = 2000, seed: int = 0, anchor: str = "middle") -> "SupervisionSet":
        """Subsample each canonical cloud; poses come from Fused and PoseOnly frames.

        With ``anchor="middle"`` the points are re-expressed at the median
        recorded frame so the rigid targets change sign over the sequence
        instead of all growing away from zero. ``"first"`` keeps the fused
        canonical frame.
        """
        if anchor not in ("middle", "first"):
            raise ValueError(f"unknown anchor {anchor!r}")
        rng = np.random.default_rng(seed)
        out = []
        for obj in objects:
            pts = obj.canonical_cloud.points
            if len(pts) > max_points:
                pts = pts[np.sort(rng.choice(len(pts), size=max_points, replace=False))]
            poses = dict(obj.poses)
            ref = RigidPose.identity()
            if anchor == "middle" and poses:
                frames = sorted(poses)
                ref = poses[frames[(len(frames) - 1) // 2]]
                back = ref.inverse()
                poses = {t: P @ back for t, P in poses.items()}
                pts = ref.apply(pts)
            out.append(ObjectSupervision(obj.object_id, np.array(pts, dtype=np.float64), poses, ref))
        return cls(out)

    def frames(self) -> list:
        return sorted({t for o in self.objects for t in o.poses})

    def objects_at(self, t: int) -> list:
        return [o for o in self.objects if t in o.poses]

    def all_points(self) -> np.ndarray:
        return np.concatenate([o.points for o in self.objects]) if self.objects else np.zeros((0, 3))


def field_bounds_for(sup: SupervisionSet, margin: float = 0.5, time_range=None):
    """Box around every supervision point at every valid frame, plus the frame range.

    Covering the swept volume (not only the canonical points) keeps the
    decoded displacement, which is expressed in units of the box size, below 1.
    """
    pts = [o.points for o in sup.objects]
    pts += [o.poses[t].apply(o.points) for o in sup.objects for t in o.valid_frames]
    if not pts or sum(len(p) for p in pts) == 0:
        raise NoSupervision("no supervision points")
    pts = np.concatenate(pts)
    lo = pts.min(axis=0) - margin
    hi = pts.max(axis=0) + margin
    if time_range is None:
        frames = sup.frames()
        time_range = (frames[0], max(frames[-1], frames[0] + 1))
    return (lo, hi), time_range


# -- losses -----------------------------------------------------------------


def motion_l1(pred: np.ndarray, target: np.ndarray):
    """Mean over points of the componentwise-summed absolute error, and its gradient."""
    diff = pred - target
    n = len(diff)
    return float(np.abs(diff).sum(axis=1).mean()), np.sign(diff) / n


def motion_loss(field: HexPlaneField, sup: SupervisionSet, t: int) -> float:
    """Average over objects valid at ``t`` of each object's mean L1 motion error."""
    objs = sup.objects_at(t)
    if not objs:
        raise NoSupervision(f"no object has a recorded pose at t={t}")
    losses = []
    for o in objs:
        _, dx, _ = field.forward(o.points, t)
        losses.append(motion_l1(dx, o.targets(t))[0])
    return float(np.mean(losses))


def tv_loss(field: HexPlaneField) -> float:
    return field.tv()


def color_reg_loss(field: HexPlaneField, points, times) -> float:
    """Mean L1 norm of the predicted color change over (point, time) pairs."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    times = np.broadcast_to(np.asarray(times, dtype=np.float64), (len(pts),))
    if len(pts) == 0:
        return 0.0
    _, _, dc = field.forward(pts, times)
    return float(np.abs(dc).sum(axis=1).mean())


@dataclass
class Batch:
    t: int
    points: np.ndarray
    targets: np.ndarray
    slices: list


def make_batch(sup: SupervisionSet, t: int, size: int, rng) -> Batch:
    """Points of every object valid at ``t``, allocated proportionally to object size."""
    objs = sup.objects_at(t)
    if not objs:
        raise NoSupervision(f"no object has a recorded pose at t={t}")
    sizes = np.array([len(o.points) for o in objs])
    alloc = np.maximum(1, np.floor(size * sizes / sizes.sum()).astype(int))
    alloc = np.minimum(alloc, sizes)
    pts, tgts, slices = [], [], []
    start = 0
    for o, k in zip(objs, alloc):
        idx = np.arange(len(o.points)) if k >= len(o.points) else np.sort(rng.choice(len(o.points), size=k, replace=False))
        pts.append(o.points[idx])
        tgts.append(o.targets(t, idx))
        slices.append(slice(start, start + len(idx)))
        start += len(idx)
    return Batch(t, np.concatenate(pts), np.concatenate(tgts), slices)


def full_batch(sup: SupervisionSet, t: int) -> Batch:
    objs = sup.objects_at(t)
    if not objs:
        raise NoSupervision(f"no object has a recorded pose at t={t}")
    pts, tgts, slices = [], [], []
    start = 0
    for o in objs:
        pts.append(o.points)
        tgts.append(o.targets(t))
        slices.append(slice(start, start + len(o.points)))
        start += len(o.points)
    return Batch(t, np.concatenate(pts), np.concatenate(tgts), slices)


@dataclass
class LossTerms:
    motion: float
    tv: float
    color_reg: float
    total: float


def loss_and_grad(field: HexPlaneField, batch: Batch, cfg: TrainConfig, motion_on: bool = True, want_grad: bool = True):
    """Total objective on one batch; returns ``(LossTerms, grads or None)``."""
    _, dx, dc, cache = field.forward(batch.points, batch.t, keep=True)
    n_obj = len(batch.slices)
    motion = 0.0
    d_dx = np.zeros_like(dx)
    for sl in batch.slices:
        val, g = motion_l1(dx[sl], batch.targets[sl])
        motion += val / n_obj
        d_dx[sl] = g / n_obj
    color = float(np.abs(dc).sum(axis=1).mean())
    d_dc = np.sign(dc) / len(dc)
    lam_m = cfg.lambda_motion if motion_on else 0.0
    if want_grad:
        tv, tv_grads = field.tv(with_grad=True)
    else:
        tv, tv_grads = field.tv(), None
    total = lam_m * motion + cfg.lambda_tv * tv + cfg.lambda_color_reg * color
    terms = LossTerms(motion, tv, color, total)
    if not want_grad:
        return terms, None
    grads = field.backward(cache, lam_m * d_dx, cfg.lambda_color_reg * d_dc)
    for k, g in enumerate(tv_grads):
        grads[k] = grads[k] + cfg.lambda_tv * g
    return terms, grads


# -- optimizer --------------------------------------------------------------


class Adam:
    def __init__(self, params, lrs, beta1=0.9, beta2=0.999, eps=1e-15):
        self.params = params
        self.lrs = lrs
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.step_count = 0

    def step(self, grads, lr_factor: float = 1.0) -> None:
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.step_count
        c2 = 1.0 - b2 ** self.step_count
        for p, g, m, v, lr in zip(self.params, grads, self.m, self.v, self.lrs):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p -= (lr * lr_factor / c1) * m / (np.sqrt(v / c2) + self.eps)


@dataclass
class LossRecord:
    iteration: int
    t: int
    motion: float
    tv: float
    color_reg: float
    total: float
    motion_active: bool


def _all_finite(grads) -> bool:
    return all(np.all(np.isfinite(g)) for g in grads)


def train_field(field: HexPlaneField, sup: SupervisionSet, cfg: TrainConfig, callback=None):
    """Optimize ``field`` in place; returns ``(field, records)``.

    Each step draws a valid frame (see ``frame_sampling``), a point batch, and takes one Adam
    step on ``lambda_motion * L_motion`` (only during the first
    ``motion_phase_fraction`` of iterations) plus the TV and color terms.
    """
    frames = sup.frames()
    if not frames:
        raise NoSupervision("supervision set has no valid frames")
    rng = np.random.default_rng(cfg.seed)
    n_planes = len(field.plane_params())
    params = field.params()
    lrs = [cfg.lr_planes] * n_planes + [cfg.lr_networks] * (len(params) - n_planes)
    opt = Adam(params, lrs, cfg.beta1, cfg.beta2, cfg.eps)
    records = []
    order = []
    for it in range(cfg.iterations):
        if cfg.frame_sampling == "uniform":
            t = frames[int(rng.integers(len(frames)))]
        else:
            if not order:
                order = [frames[k] for k in rng.permutation(len(frames))][::-1]
            t = order.pop()
        batch = make_batch(sup, t, cfg.batch, rng)
        active = cfg.motion_active(it)
        terms, grads = loss_and_grad(field, batch, cfg, motion_on=active)
        if not np.isfinite(terms.total) or not _all_finite(grads):
            raise NonFiniteLoss(it, f"motion={terms.motion} tv={terms.tv} color={terms.color_reg}")
        opt.step(grads, cfg.lr_factor(it))
        rec = LossRecord(it, t, terms.motion, terms.tv, terms.color_reg, terms.total, active)
        records.append(rec)
        if callback is not None:
            callback(rec)
    return field, records


def write_loss_csv(path, records) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iter", "motion", "tv", "colorreg", "total"])
        for r in records:
            w.writerow([r.iteration, repr(r.motion), repr(r.tv), repr(r.color_reg), repr(r.total)])


# -- gradient verification -------------------------------------------------


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """Normwise relative error ``|a - n|_inf / max(|a|_inf, |n|_inf, floor)``.

    Componentwise ratios blow up on entries whose true gradient is near zero,
    where the finite difference is dominated by rounding in the loss.
    """
    a = np.asarray(analytic, dtype=np.float64).reshape(-1)
    n = np.asarray(numeric, dtype=np.float64).reshape(-1)
    if a.size == 0:
        return 0.0
    scale = max(np.abs(a).max(), np.abs(n).max(), floor)
    return float(np.abs(a - n).max() / scale)


def grad_check(field: HexPlaneField, sup: SupervisionSet, t: int, step: float = 1e-4, cfg: TrainConfig | None = None,
               motion_on: bool = True, batch: Batch | None = None, floor: float = 1e-8, return_details: bool = False):
    """Max over parameter arrays of the normwise relative error between the
    analytic and central-difference gradients.

    Every entry of every parameter is perturbed. The objective is the full
    training loss on a fixed batch (all supervision points at ``t`` unless
    ``batch`` is given).
    """
    cfg = cfg or TrainConfig()
    batch = batch or full_batch(sup, t)
    _, grads = loss_and_grad(field, batch, cfg, motion_on=motion_on)
    params = field.params()
    worst = 0.0
    details = []
    for k, (p, g) in enumerate(zip(params, grads)):
        flat = p.reshape(-1)
        num = np.empty(flat.size)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = loss_and_grad(field, batch, cfg, motion_on=motion_on, want_grad=False)[0].total
            flat[i] = orig - step
            down = loss_and_grad(field, batch, cfg, motion_on=motion_on, want_grad=False)[0].total
            flat[i] = orig
            num[i] = (up - down) / (2.0 * step)
        err = relative_error(g, num, floor)
        worst = max(worst, err)
        details.append((k, err))
    if return_details:
        return worst, details
    return worst


def random_check_problem(seed: int, resolution: int = 4, feature_dim: int = 4, hidden: int = 16, n_points: int = 12):
    """A small random field, supervision and frame for gradient checking.

    Planes are drawn from U[-1, 1] and the decoders are not zeroed, so every
    parameter receives a non-trivial gradient.
    """
    rng = np.random.default_rng(seed)
    field = HexPlaneField.create(([0.0, 0.0, 0.0], [1.0, 1.0, 1.0]), (0, 9), resolution=resolution,
                                 feature_dim=feature_dim, hidden=hidden, out_dim=hidden, seed=seed,
                                 plane_init="uniform", zero_decoders=False)
    for P in field.plane_params():
        P[:] = rng.uniform(-1.0, 1.0, P.shape)
    pts = rng.uniform(0.1, 0.9, (n_points, 3))
    t = int(rng.integers(0, 10))
    pose = RigidPose.from_axis_angle(rng.normal(size=3), float(rng.uniform(0.0, 0.3)), rng.uniform(-0.3, 0.3, 3))
    sup = SupervisionSet([ObjectSupervision(0, pts, {t: pose})])
    return field, sup, t
