"""Slow reference implementations used to check the fast paths.

Everything here is written with explicit per-pixel loops or dense matrices
and shares no code with the kernels it is compared against.
"""
import math

import numpy as np


def clamp(i, n):
    return min(max(i, 0), n - 1)


def laplacian_loops(v, h=1.0):
    """5-point Laplacian of a (H, W) array with clamped indices, float64."""
    v = np.asarray(v, dtype=np.float64)
    hh, ww = v.shape
    out = np.zeros_like(v)
    for i in range(hh):
        for j in range(ww):
            out[i, j] = (
                v[clamp(i + 1, hh), j] + v[clamp(i - 1, hh), j]
                + v[i, clamp(j - 1, ww)] + v[i, clamp(j + 1, ww)] - 4 * v[i, j]
            ) / (h * h)
    return out


def grad_mag_loops(v, h=1.0):
    v = np.asarray(v, dtype=np.float64)
    hh, ww = v.shape
    out = np.zeros_like(v)
    for i in range(hh):
        for j in range(ww):
            a = v[clamp(i + 1, hh), j] - v[clamp(i - 1, hh), j]
            b = v[i, clamp(j + 1, ww)] - v[i, clamp(j - 1, ww)]
            out[i, j] = math.sqrt(a * a + b * b) / (2 * h)
    return out


def dirichlet_energy_loops(v, h=1.0):
    """Sum of squared forward differences of a (C, H, W) or (H, W) array."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim == 2:
        v = v[None]
    total = 0.0
    for c in range(v.shape[0]):
        for i in range(v.shape[1]):
            for j in range(v.shape[2]):
                if i + 1 < v.shape[1]:
                    total += ((v[c, i + 1, j] - v[c, i, j]) / h) ** 2
                if j + 1 < v.shape[2]:
                    total += ((v[c, i, j + 1] - v[c, i, j]) / h) ** 2
    return total


def forward_difference_matrix(m):
    """(m, m) forward difference with a zero last row."""
    a = np.zeros((m, m))
    for i in range(m - 1):
        a[i, i], a[i, i + 1] = -1.0, 1.0
    return a


def laplacian_kron(v, h=1.0):
    """Laplacian of a (H, W) array via Kronecker products on the column-major vector."""
    v = np.asarray(v, dtype=np.float64)
    m1, m2 = v.shape
    lam1, lam2 = forward_difference_matrix(m1), forward_difference_matrix(m2)
    d1, d2 = -lam1.T @ lam1, -lam2.T @ lam2
    op = np.kron(d2, np.eye(m1)) + np.kron(np.eye(m2), d1)
    vec = v.reshape(-1, order="F")
    return (op @ vec).reshape(m1, m2, order="F") / (h * h)


def disc_offsets(r):
    return [(di, dj) for di in range(-r, r + 1) for dj in range(-r, r + 1) if di * di + dj * dj <= r * r]


def violations_brute_force(f, r):
    """Per-pixel evaluation of ``(1 - f(x)) * sum_{o in B_r} (1 - 2 f(x + o)) < 0``.

    Off-grid pixels are background (f = 0). The positive 1/|B_r| weight does
    not change the sign, so the comparison is exact in integers.
    """
    f = np.asarray(f)
    hh, ww = f.shape
    offs = disc_offsets(r)
    out = np.zeros((hh, ww), dtype=bool)
    for i in range(hh):
        for j in range(ww):
            if f[i, j]:
                continue
            s = 0
            for di, dj in offs:
                ii, jj = i + di, j + dj
                inside = 0 <= ii < hh and 0 <= jj < ww
                s += 1 - 2 * (int(f[ii, jj]) if inside else 0)
            out[i, j] = s < 0
    return out


def concave_brute_force(f, radii):
    out = np.zeros(np.shape(f), dtype=bool)
    for r in radii:
        out |= violations_brute_force(f, r)
    return out


def central_difference(fn, x, idx, eps=1e-3):
    """Central finite difference of scalar ``fn()`` w.r.t. ``x[idx]`` (x modified in place, restored)."""
    old = x[idx]
    x[idx] = old + eps
    fp = fn()
    x[idx] = old - eps
    fm = fn()
    x[idx] = old
    return (fp - fm) / (2 * eps)
