"""Pure-numpy implementations of the hot kernels.

Used when the compiled extension is unavailable, and as the reference the
compiled kernels are tested against. Every function here has a twin with the
same signature in ``_ckernels.pyx``.
"""
import math

import numpy as np


def laplacian(u, inv_h2):
    """5-point Laplacian with replicate padding over the last two axes of ``u`` (N, H, W)."""
    p = np.pad(u, ((0, 0), (1, 1), (1, 1)), mode="edge")
    out = p[:, 2:, 1:-1] + p[:, :-2, 1:-1]
    out += p[:, 1:-1, :-2]
    out += p[:, 1:-1, 2:]
    out -= 4 * u
    out *= u.dtype.type(inv_h2)
    return out


def grad_mag_central(u, inv_2h):
    p = np.pad(u, ((0, 0), (1, 1), (1, 1)), mode="edge")
    a = p[:, 2:, 1:-1] - p[:, :-2, 1:-1]
    b = p[:, 1:-1, 2:] - p[:, 1:-1, :-2]
    out = np.sqrt(a * a + b * b)
    out *= u.dtype.type(inv_2h)
    return out


def im2col3x3(x):
    """Replicate-padded 3x3 patches: (B, C, H, W) -> (B, C*9, H*W)."""
    b, c, h, w = x.shape
    p = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)), mode="edge")
    cols = np.empty((b, c, 9, h, w), dtype=x.dtype)
    for ki in range(3):
        for kj in range(3):
            cols[:, :, ki * 3 + kj] = p[:, :, ki:ki + h, kj:kj + w]
    return cols.reshape(b, c * 9, h * w)


def col2im3x3(cols, h, w):
    """Adjoint of :func:`im2col3x3`: scatter-add patch gradients back onto the grid."""
    b, c9, _ = cols.shape
    c = c9 // 9
    cols = cols.reshape(b, c, 9, h, w)
    p = np.zeros((b, c, h + 2, w + 2), dtype=cols.dtype)
    for ki in range(3):
        for kj in range(3):
            p[:, :, ki:ki + h, kj:kj + w] += cols[:, :, ki * 3 + kj]
    # fold the replicated border back onto the edge pixels
    p[:, :, 1, :] += p[:, :, 0, :]
    p[:, :, h, :] += p[:, :, h + 1, :]
    p[:, :, :, 1] += p[:, :, :, 0]
    p[:, :, :, w] += p[:, :, :, w + 1]
    return np.ascontiguousarray(p[:, :, 1:h + 1, 1:w + 1])


def disc_count(f, r):
    """Number of nonzero pixels of ``f`` (H, W) inside the radius-``r`` lattice disc.

    Pixels outside the grid count as zero.
    """
    f = np.asarray(f, dtype=np.int32)
    h, w = f.shape
    prefix = np.zeros((h, w + 1), dtype=np.int32)
    np.cumsum(f, axis=1, out=prefix[:, 1:])
    cols = np.arange(w)
    out = np.zeros((h, w), dtype=np.int32)
    for dy in range(-r, r + 1):
        half = math.isqrt(r * r - dy * dy)
        lo = np.clip(cols - half, 0, w)
        hi = np.clip(cols + half + 1, 0, w)
        run = prefix[:, hi] - prefix[:, lo]
        # row y of the output reads row y + dy of the input
        if dy >= 0:
            if dy < h:
                out[: h - dy] += run[dy:]
        elif -dy < h:
            out[-dy:] += run[: h + dy]
    return out
