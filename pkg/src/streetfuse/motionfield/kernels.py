"""Bilinear plane gather / scatter kernels.

Each kernel exists twice: a numba ``@njit`` loop and a vectorized numpy
version. ``bilinear_gather`` and ``bilinear_scatter`` point at the numba pair
unless ``STREETFUSE_DISABLE_NUMBA=1``. Grid coordinates must already lie in
``[0, n - 1]`` along each axis; the last cell is closed on its upper edge.
"""

import numpy as np

from streetfuse._accel import USE_NUMBA, njit


def _corner_index(g, n):
    i0 = np.minimum(np.floor(g).astype(np.int64), n - 2)
    i0 = np.maximum(i0, 0)
    return i0, g - i0


def gather_numpy(plane, g0, g1):
    """Bilinearly sample ``plane`` (n0, n1, d) at grid coords ``(g0, g1)`` -> (B, d)."""
    n0, n1, _ = plane.shape
    i, a = _corner_index(g0, n0)
    j, b = _corner_index(g1, n1)
    a = a[:, None]
    b = b[:, None]
    return (
        plane[i, j] * ((1.0 - a) * (1.0 - b))
        + plane[i + 1, j] * (a * (1.0 - b))
        + plane[i, j + 1] * ((1.0 - a) * b)
        + plane[i + 1, j + 1] * (a * b)
    )


def scatter_numpy(grad, g0, g1, dout):
    """Accumulate the adjoint of ``gather`` into ``grad`` (n0, n1, d) in place."""
    n0, n1, d = grad.shape
    i, a = _corner_index(g0, n0)
    j, b = _corner_index(g1, n1)
    flat = np.concatenate([i * n1 + j, (i + 1) * n1 + j, i * n1 + j + 1, (i + 1) * n1 + j + 1])
    w = np.concatenate([(1.0 - a) * (1.0 - b), a * (1.0 - b), (1.0 - a) * b, a * b])
    vals = (w[:, None] * np.tile(dout, (4, 1))).reshape(-1)
    idx = (flat[:, None] * d + np.arange(d)[None, :]).reshape(-1)
    grad += np.bincount(idx, weights=vals, minlength=n0 * n1 * d).reshape(n0, n1, d)
    return grad


@njit(cache=True, nogil=True)
def gather_numba(plane, g0, g1):
    n0, n1, d = plane.shape
    B = g0.shape[0]
    out = np.empty((B, d))
    for k in range(B):
        i = min(max(int(np.floor(g0[k])), 0), n0 - 2)
        j = min(max(int(np.floor(g1[k])), 0), n1 - 2)
        a = g0[k] - i
        b = g1[k] - j
        w00 = (1.0 - a) * (1.0 - b)
        w10 = a * (1.0 - b)
        w01 = (1.0 - a) * b
        w11 = a * b
        for c in range(d):
            out[k, c] = (
                plane[i, j, c] * w00
                + plane[i + 1, j, c] * w10
                + plane[i, j + 1, c] * w01
                + plane[i + 1, j + 1, c] * w11
            )
    return out


@njit(cache=True, nogil=True)
def scatter_numba(grad, g0, g1, dout):
    n0, n1, d = grad.shape
    B = g0.shape[0]
    for k in range(B):
        i = min(max(int(np.floor(g0[k])), 0), n0 - 2)
        j = min(max(int(np.floor(g1[k])), 0), n1 - 2)
        a = g0[k] - i
        b = g1[k] - j
        w00 = (1.0 - a) * (1.0 - b)
        w10 = a * (1.0 - b)
        w01 = (1.0 - a) * b
        w11 = a * b
        for c in range(d):
            g = dout[k, c]
            grad[i, j, c] += g * w00
            grad[i + 1, j, c] += g * w10
            grad[i, j + 1, c] += g * w01
            grad[i + 1, j + 1, c] += g * w11
    return grad


@njit(cache=True, nogil=True)
def tv_numba(plane):
    """Sum of squared forward differences along both grid axes, and its gradient."""
    n0, n1, d = plane.shape
    grad = np.zeros_like(plane)
    total = 0.0
    for i in range(n0):
        for j in range(n1):
            for c in range(d):
                if i > 0:
                    diff = plane[i, j, c] - plane[i - 1, j, c]
                    total += diff * diff
                    grad[i, j, c] += 2.0 * diff
                    grad[i - 1, j, c] -= 2.0 * diff
                if j > 0:
                    diff = plane[i, j, c] - plane[i, j - 1, c]
                    total += diff * diff
                    grad[i, j, c] += 2.0 * diff
                    grad[i, j - 1, c] -= 2.0 * diff
    return total, grad


def tv_numpy(plane):
    di = plane[1:] - plane[:-1]
    dj = plane[:, 1:] - plane[:, :-1]
    total = float(np.sum(di * di) + np.sum(dj * dj))
    grad = np.zeros_like(plane)
    grad[1:] += 2.0 * di
    grad[:-1] -= 2.0 * di
    grad[:, 1:] += 2.0 * dj
    grad[:, :-1] -= 2.0 * dj
    return total, grad


def _contig(a):
    return np.ascontiguousarray(a, dtype=np.float64)


if USE_NUMBA:

    def bilinear_gather(plane, g0, g1):
        return gather_numba(_contig(plane), _contig(g0), _contig(g1))

    def bilinear_scatter(grad, g0, g1, dout):
        return scatter_numba(grad, _contig(g0), _contig(g1), _contig(dout))

    def plane_tv(plane):
        return tv_numba(_contig(plane))

else:
    bilinear_gather = gather_numpy
    bilinear_scatter = scatter_numpy
    plane_tv = tv_numpy

BACKEND = "numba" if USE_NUMBA else "numpy"
