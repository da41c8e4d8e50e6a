"""Binary field checkpoint (little-endian).

Layout::

    b"HEXP"  version:u32  r:u32  d:u32  h:u32  n_scales:u32  scales:u32[n_scales]
    r_t:u32 (time-axis nodes; 0 means rho * r like the spatial axes)
    bounds:f64[8] = x_min x_max y_min y_max z_min z_max t_min t_max
    planes: f32 row-major (n_i, n_j, d), order (xy, xz, yz, xt, yt, zt) x ascending scale
    networks (fusion, motion decoder, color decoder), each:
        n_layers:u32, then per layer rows:u32 cols:u32 W:f32[rows*cols] b:f32[rows]
"""

from __future__ import annotations

import struct

import numpy as np

from streetfuse.errors import IoError
from streetfuse.motionfield.field import MLP, PLANE_AXES, HexPlaneField

MAGIC = b"HEXP"
VERSION = 1


def to_bytes(field: HexPlaneField) -> bytes:
    parts = [MAGIC, struct.pack("<5I", VERSION, field.resolution, field.feature_dim, field.out_dim, len(field.scales))]
    parts.append(struct.pack(f"<{len(field.scales)}I", *field.scales))
    parts.append(struct.pack("<I", field.time_resolution or 0))
    lo, hi = field.lo, field.hi
    parts.append(struct.pack("<8d", lo[0], hi[0], lo[1], hi[1], lo[2], hi[2], lo[3], hi[3]))
    for P in field.plane_params():
        parts.append(np.ascontiguousarray(P, dtype="<f4").tobytes())
    for net in (field.phi, field.motion_decoder, field.color_decoder):
        parts.append(struct.pack("<I", len(net.layers)))
        for W, b in net.layers:
            parts.append(struct.pack("<2I", *W.shape))
            parts.append(np.ascontiguousarray(W, dtype="<f4").tobytes())
            parts.append(np.ascontiguousarray(b, dtype="<f4").tobytes())
    return b"".join(parts)


def save_field(field: HexPlaneField, path) -> None:
    try:
        with open(path, "wb") as fh:
            fh.write(to_bytes(field))
    except OSError as exc:
        raise IoError(f"cannot write checkpoint {path}: {exc}") from exc


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise IoError("truncated checkpoint")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def array(self, shape) -> np.ndarray:
        count = int(np.prod(shape))
        return np.frombuffer(self.take(4 * count), dtype="<f4").astype(np.float64).reshape(shape)


def from_bytes(buf: bytes) -> HexPlaneField:
    rd = _Reader(buf)
    if rd.take(4) != MAGIC:
        raise IoError("not a HEXP checkpoint")
    version, r, d, h, n_scales = rd.unpack("<5I")
    if version != VERSION:
        raise IoError(f"unsupported checkpoint version {version}")
    scales = rd.unpack(f"<{n_scales}I")
    (rt,) = rd.unpack("<I")
    rt = rt or None
    b = rd.unpack("<8d")
    lo = (b[0], b[2], b[4])
    hi = (b[1], b[3], b[5])
    planes = [[None] * 6 for _ in scales]
    for p, (i, j) in enumerate(PLANE_AXES):
        for s, rho in enumerate(scales):
            n = rho * r
            n_t = n if rt is None else rt
            planes[s][p] = rd.array((n_t if i == 3 else n, n_t if j == 3 else n, d))
    nets = []
    for _ in range(3):
        (n_layers,) = rd.unpack("<I")
        layers = []
        for _ in range(n_layers):
            rows, cols = rd.unpack("<2I")
            layers.append((rd.array((rows, cols)), rd.array((rows,))))
        nets.append(MLP(layers))
    if rd.pos != len(buf):
        raise IoError("trailing bytes after checkpoint")
    return HexPlaneField(planes, nets[0], nets[1], nets[2], (lo, hi), (b[6], b[7]), r, d, scales, rt)


def load_field(path) -> HexPlaneField:
    try:
        with open(path, "rb") as fh:
            buf = fh.read()
    except OSError as exc:
        raise IoError(f"cannot read checkpoint {path}: {exc}") from exc
    return from_bytes(buf)
