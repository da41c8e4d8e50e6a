"""HexPlane spatio-temporal feature field with motion and color decoders.

Coordinates are normalized by the scene bounds: ``(x, y, z)`` maps to
``[0, 1]^3`` and the frame index ``t`` maps to ``[0, 1]`` over the time range.
At upsampling scale ``rho`` a plane axis has ``rho * r`` nodes and the grid
coordinate is ``normalized * (rho * r - 1)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from streetfuse.errors import OutOfBounds
from streetfuse.motionfield.kernels import bilinear_gather, bilinear_scatter, plane_tv

PLANE_AXES = ((0, 1), (0, 2), (1, 2), (0, 3), (1, 3), (2, 3))
PLANE_NAMES = ("xy", "xz", "yz", "xt", "yt", "zt")
DEFAULT_SCALES = (1, 2, 4)


def _axis_nodes(rho: int, resolution: int, time_resolution) -> np.ndarray:
    nt = rho * resolution if time_resolution is None else time_resolution
    return np.array([rho * resolution] * 3 + [nt])


class MLP:
    """Fully connected ReLU network; weights ``W`` are (out, in), no activation on the output."""

    def __init__(self, layers):
        self.layers = [(np.asarray(W, dtype=np.float64), np.asarray(b, dtype=np.float64)) for W, b in layers]

    @classmethod
    def init(cls, sizes, rng, zero_last: bool = False) -> "MLP":
        layers = []
        for k, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            bound = 1.0 / np.sqrt(n_in)
            if zero_last and k == len(sizes) - 2:
                W = np.zeros((n_out, n_in))
                b = np.zeros(n_out)
            else:
                W = rng.uniform(-bound, bound, size=(n_out, n_in))
                b = rng.uniform(-bound, bound, size=n_out)
            layers.append((W, b))
        return cls(layers)

    @property
    def sizes(self) -> list:
        return [self.layers[0][0].shape[1]] + [W.shape[0] for W, _ in self.layers]

    def params(self) -> list:
        out = []
        for W, b in self.layers:
            out.extend([W, b])
        return out

    def forward(self, x):
        """Returns the output and the per-layer inputs needed by ``backward``."""
        inputs = []
        h = x
        last = len(self.layers) - 1
        for k, (W, b) in enumerate(self.layers):
            inputs.append(h)
            h = h @ W.T + b
            if k < last:
                h = np.maximum(h, 0.0)
        return h, inputs

    def backward(self, inputs, dout):
        """Gradients in ``params()`` order, plus the gradient w.r.t. the input."""
        grads = [None] * (2 * len(self.layers))
        g = dout
        for k in range(len(self.layers) - 1, -1, -1):
            W, _ = self.layers[k]
            x = inputs[k]
            grads[2 * k] = g.T @ x
            grads[2 * k + 1] = g.sum(axis=0)
            g = g @ W
            if k > 0:
                # inputs[k] is the ReLU output of layer k-1
                g = g * (x > 0.0)
        return grads, g


@dataclass
class Deformation:
    delta_x: np.ndarray
    delta_c: np.ndarray


@dataclass
class FieldCache:
    coords: list
    plane_values: list
    scale_products: list
    phi_inputs: list
    dx_inputs: list
    dc_inputs: list


class HexPlaneField:
    """Six multi-resolution feature planes, a fusion MLP and two decoders.

    ``bounds`` is ``(lo, hi)`` with 3-vectors in meters; ``time_range`` is
    ``(t_min, t_max)`` in frame indices.
    """

    def __init__(self, planes, phi: MLP, motion_decoder: MLP, color_decoder: MLP, bounds, time_range,
                 resolution: int, feature_dim: int, scales=DEFAULT_SCALES, time_resolution=None):
        self.scales = tuple(int(s) for s in scales)
        self.resolution = int(resolution)
        self.time_resolution = None if time_resolution is None else int(time_resolution)
        self.feature_dim = int(feature_dim)
        lo, hi = (np.asarray(b, dtype=np.float64).reshape(3) for b in bounds)
        if np.any(hi <= lo):
            raise ValueError(f"degenerate spatial bounds {lo} .. {hi}")
        t0, t1 = float(time_range[0]), float(time_range[1])
        if t1 <= t0:
            raise ValueError(f"degenerate time range {t0} .. {t1}")
        self.lo = np.array([*lo, t0])
        self.hi = np.array([*hi, t1])
        self.planes = planes
        self.phi = phi
        self.motion_decoder = motion_decoder
        self.color_decoder = color_decoder
        for s in range(len(self.scales)):
            n = self.axis_nodes(s)
            for p, (a, b) in enumerate(PLANE_AXES):
                if planes[s][p].shape != (n[a], n[b], self.feature_dim):
                    raise ValueError(f"plane {PLANE_NAMES[p]} at scale {self.scales[s]} has shape {planes[s][p].shape}")
        if phi.sizes[0] != len(self.scales) * self.feature_dim:
            raise ValueError("fusion MLP input width must be scales * feature_dim")

    @classmethod
    def create(cls, bounds, time_range, resolution: int = 64, feature_dim: int = 32, hidden: int = 64,
               out_dim: int = 64, scales=DEFAULT_SCALES, seed: int = 0, plane_init: str = "uniform",
               zero_decoders: bool = True, time_resolution=None) -> "HexPlaneField":
        """Fresh field.

        ``plane_init`` is ``"uniform"`` (U[-0.1, 0.1]) or ``"ones"``. With
        ``zero_decoders`` the last decoder layers start at zero, so the initial
        deformation is the identity. ``time_resolution`` fixes the number of
        nodes on the time axis at every scale; by default it follows the
        spatial axes (``rho * resolution``).
        """
        rng = np.random.default_rng(seed)
        planes = []
        for rho in scales:
            n = _axis_nodes(rho, resolution, time_resolution)
            row = []
            for a, b in PLANE_AXES:
                shape = (n[a], n[b], feature_dim)
                if plane_init == "ones":
                    row.append(np.ones(shape))
                elif plane_init == "near_ones":
                    row.append(1.0 + rng.uniform(-0.1, 0.1, size=shape))
                elif plane_init == "uniform":
                    row.append(rng.uniform(-0.1, 0.1, size=shape))
                else:
                    raise ValueError(f"unknown plane_init {plane_init!r}")
            planes.append(row)
        phi = MLP.init([len(scales) * feature_dim, hidden, out_dim], rng)
        dx = MLP.init([out_dim, hidden, hidden, 3], rng, zero_last=zero_decoders)
        dc = MLP.init([out_dim, hidden, hidden, 3], rng, zero_last=zero_decoders)
        return cls(planes, phi, dx, dc, bounds, time_range, resolution, feature_dim, scales, time_resolution)

    # -- parameters -------------------------------------------------------

    @property
    def out_dim(self) -> int:
        return self.phi.sizes[-1]

    @property
    def extent(self) -> np.ndarray:
        """Spatial box size; the motion decoder output is in units of it."""
        return self.hi[:3] - self.lo[:3]

    @property
    def bounds(self):
        return self.lo[:3].copy(), self.hi[:3].copy()

    @property
    def time_range(self):
        return float(self.lo[3]), float(self.hi[3])

    def plane_order(self):
        """``(scale_index, plane_index)`` in storage order: plane-major, ascending scale."""
        return [(s, p) for p in range(6) for s in range(len(self.scales))]

    def plane_params(self) -> list:
        return [self.planes[s][p] for s, p in self.plane_order()]

    def network_params(self) -> list:
        return self.phi.params() + self.motion_decoder.params() + self.color_decoder.params()

    def params(self) -> list:
        """Every trainable array, in checkpoint order."""
        return self.plane_params() + self.network_params()

    def copy(self) -> "HexPlaneField":
        planes = [[P.copy() for P in row] for row in self.planes]
        dup = lambda m: MLP([(W.copy(), b.copy()) for W, b in m.layers])  # noqa: E731
        return HexPlaneField(planes, dup(self.phi), dup(self.motion_decoder), dup(self.color_decoder),
                             self.bounds, self.time_range, self.resolution, self.feature_dim, self.scales,
                             self.time_resolution)

    # -- coordinates ------------------------------------------------------

    def normalize(self, xyz, t) -> np.ndarray:
        """(B, 4) normalized coordinates; raises OutOfBounds outside the scene box."""
        xyz = np.asarray(xyz, dtype=np.float64).reshape(-1, 3)
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), (len(xyz),))
        q = np.column_stack([xyz, t])
        if not np.all(np.isfinite(q)):
            raise OutOfBounds("non-finite query coordinate")
        outside = (q < self.lo) | (q > self.hi)
        if outside.any():
            k, a = np.argwhere(outside)[0]
            raise OutOfBounds(
                f"query {q[k].tolist()} leaves bounds on axis {'xyzt'[a]} [{self.lo[a]}, {self.hi[a]}]"
            )
        return (q - self.lo) / (self.hi - self.lo)

    def axis_nodes(self, scale_index: int) -> np.ndarray:
        """Node count along x, y, z, t at one scale."""
        return _axis_nodes(self.scales[scale_index], self.resolution, self.time_resolution)

    def grid_coords(self, norm: np.ndarray, scale_index: int) -> np.ndarray:
        return norm * (self.axis_nodes(scale_index) - 1)

    # -- forward / backward -----------------------------------------------

    def encode(self, xyz, t, keep: bool = False):
        """Per-scale Hadamard products concatenated: (B, scales * d)."""
        norm = self.normalize(xyz, t)
        coords, values, prods = [], [], []
        for s in range(len(self.scales)):
            g = self.grid_coords(norm, s)
            vals = [bilinear_gather(self.planes[s][p], g[:, a], g[:, b]) for p, (a, b) in enumerate(PLANE_AXES)]
            prod = vals[0].copy()
            for v in vals[1:]:
                prod *= v
            coords.append(g)
            values.append(vals)
            prods.append(prod)
        enc = np.concatenate(prods, axis=1)
        if keep:
            return enc, coords, values, prods
        return enc

    def forward(self, xyz, t, keep: bool = False):
        """Feature, motion and color deltas for a batch; optionally the backward cache."""
        enc, coords, values, prods = self.encode(xyz, t, keep=True)
        feat, phi_in = self.phi.forward(enc)
        dx, dx_in = self.motion_decoder.forward(feat)
        dx = dx * self.extent
        dc, dc_in = self.color_decoder.forward(feat)
        if not keep:
            return feat, dx, dc
        return feat, dx, dc, FieldCache(coords, values, prods, phi_in, dx_in, dc_in)

    def backward(self, cache: FieldCache, d_dx=None, d_dc=None) -> list:
        """Gradients for ``params()`` given upstream gradients of the two decoder outputs."""
        B = len(cache.phi_inputs[0])
        if d_dx is None:
            d_dx = np.zeros((B, 3))
        if d_dc is None:
            d_dc = np.zeros((B, 3))
        g_dx, d_feat = self.motion_decoder.backward(cache.dx_inputs, d_dx * self.extent)
        g_dc, d_feat_c = self.color_decoder.backward(cache.dc_inputs, d_dc)
        g_phi, d_enc = self.phi.backward(cache.phi_inputs, d_feat + d_feat_c)
        d = self.feature_dim
        plane_grads = [[np.zeros_like(P) for P in row] for row in self.planes]
        for s in range(len(self.scales)):
            g_prod = d_enc[:, s * d:(s + 1) * d]
            vals = cache.plane_values[s]
            # products of all other planes via prefix/suffix products (no division)
            prefix = [np.ones_like(g_prod)]
            for v in vals[:-1]:
                prefix.append(prefix[-1] * v)
            suffix = np.ones_like(g_prod)
            g = cache.coords[s]
            for p in range(5, -1, -1):
                a, b = PLANE_AXES[p]
                bilinear_scatter(plane_grads[s][p], g[:, a], g[:, b], g_prod * prefix[p] * suffix)
                suffix = suffix * vals[p]
        return [plane_grads[s][p] for s, p in self.plane_order()] + g_phi + g_dx + g_dc

    def tv(self, with_grad: bool = False):
        """Mean squared forward difference over all planes.

        Every difference along either grid axis counts once; the sum is divided
        by the total number of plane cells.
        """
        total = 0.0
        count = 0
        grads = []
        for s, p in self.plane_order():
            P = self.planes[s][p]
            val, g = plane_tv(P)
            total += val
            count += P.shape[0] * P.shape[1]
            grads.append(g)
        if not with_grad:
            return total / count
        return total / count, [g / count for g in grads]

    # -- public query API -------------------------------------------------

    def query_features(self, x, y, z, t) -> np.ndarray:
        feat, _, _ = self.forward(np.array([[x, y, z]], dtype=np.float64), t)
        return feat[0]

    def query_features_batch(self, xyz, t) -> np.ndarray:
        return self.forward(xyz, t)[0]

    def decode(self, feature) -> Deformation:
        feat = np.asarray(feature, dtype=np.float64)
        single = feat.ndim == 1
        feat = feat.reshape(-1, self.out_dim)
        dx, _ = self.motion_decoder.forward(feat)
        dx = dx * self.extent
        dc, _ = self.color_decoder.forward(feat)
        if single:
            return Deformation(dx[0], dc[0])
        return Deformation(dx, dc)

    def deformation(self, xyz, t) -> Deformation:
        _, dx, dc = self.forward(xyz, t)
        return Deformation(dx, dc)


def query_features(field: HexPlaneField, x, y, z, t) -> np.ndarray:
    return field.query_features(x, y, z, t)


def decode(field: HexPlaneField, feature) -> Deformation:
    return field.decode(feature)
