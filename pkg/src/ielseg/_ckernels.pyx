# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels. Signatures and results match ``_pykernels``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()

ctypedef fused real:
    float
    double


cdef inline Py_ssize_t _clamp(Py_ssize_t i, Py_ssize_t n) nogil:
    if i < 0:
        return 0
    if i >= n:
        return n - 1
    return i


def laplacian(const real[:, :, ::1] u, double inv_h2):
    cdef Py_ssize_t n = u.shape[0], h = u.shape[1], w = u.shape[2]
    cdef Py_ssize_t k, i, j, im, ip, jm, jp
    cdef real c = <real>inv_h2
    cdef real acc
    out_arr = np.empty((n, h, w), dtype=np.float32 if real is float else np.float64)
    cdef real[:, :, ::1] out = out_arr
    with nogil:
        for k in range(n):
            for i in range(h):
                im = i - 1 if i > 0 else 0
                ip = i + 1 if i < h - 1 else h - 1
                for j in range(w):
                    jm = j - 1 if j > 0 else 0
                    jp = j + 1 if j < w - 1 else w - 1
                    acc = u[k, ip, j] + u[k, im, j]
                    acc = acc + u[k, i, jm]
                    acc = acc + u[k, i, jp]
                    acc = acc - 4 * u[k, i, j]
                    out[k, i, j] = acc * c
    return out_arr


def grad_mag_central(const real[:, :, ::1] u, double inv_2h):
    cdef Py_ssize_t n = u.shape[0], h = u.shape[1], w = u.shape[2]
    cdef Py_ssize_t k, i, j, im, ip, jm, jp
    cdef real c = <real>inv_2h
    cdef real a, b
    out_arr = np.empty((n, h, w), dtype=np.float32 if real is float else np.float64)
    cdef real[:, :, ::1] out = out_arr
    with nogil:
        for k in range(n):
            for i in range(h):
                im = i - 1 if i > 0 else 0
                ip = i + 1 if i < h - 1 else h - 1
                for j in range(w):
                    jm = j - 1 if j > 0 else 0
                    jp = j + 1 if j < w - 1 else w - 1
                    a = u[k, ip, j] - u[k, im, j]
                    b = u[k, i, jp] - u[k, i, jm]
                    out[k, i, j] = <real>sqrt(a * a + b * b) * c
    return out_arr


def im2col3x3(const real[:, :, :, ::1] x):
    cdef Py_ssize_t nb = x.shape[0], nc = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t b, c, ki, kj, i, j, si, row, lo, hi
    out_arr = np.empty((nb, nc * 9, h * w), dtype=np.float32 if real is float else np.float64)
    cdef real[:, :, ::1] out = out_arr
    cdef const real* src
    cdef real* dst
    with nogil:
        for b in range(nb):
            for c in range(nc):
                for ki in range(3):
                    for kj in range(3):
                        row = c * 9 + ki * 3 + kj
                        # columns whose source j + kj - 1 stays on the grid
                        lo = 1 if kj == 0 else 0
                        hi = w - 1 if kj == 2 else w
                        for i in range(h):
                            si = _clamp(i + ki - 1, h)
                            src = &x[b, c, si, 0]
                            dst = &out[b, row, i * w]
                            for j in range(lo, hi):
                                dst[j] = src[j + kj - 1]
                            if kj == 0:
                                dst[0] = src[0]
                            elif kj == 2:
                                dst[w - 1] = src[w - 1]
    return out_arr


def col2im3x3(const real[:, :, ::1] cols, Py_ssize_t h, Py_ssize_t w):
    cdef Py_ssize_t nb = cols.shape[0], nc = cols.shape[1] // 9
    cdef Py_ssize_t b, c, ki, kj, i, j, si, row, lo, hi
    out_arr = np.zeros((nb, nc, h, w), dtype=np.float32 if real is float else np.float64)
    cdef real[:, :, :, ::1] out = out_arr
    cdef const real* src
    cdef real* dst
    with nogil:
        for b in range(nb):
            for c in range(nc):
                for ki in range(3):
                    for kj in range(3):
                        row = c * 9 + ki * 3 + kj
                        lo = 1 if kj == 0 else 0
                        hi = w - 1 if kj == 2 else w
                        for i in range(h):
                            si = _clamp(i + ki - 1, h)
                            src = &cols[b, row, i * w]
                            dst = &out[b, c, si, 0]
                            for j in range(lo, hi):
                                dst[j + kj - 1] += src[j]
                            if kj == 0:
                                dst[0] += src[0]
                            elif kj == 2:
                                dst[w - 1] += src[w - 1]
    return out_arr


def disc_count(f, int r):
    cdef const cnp.int32_t[:, ::1] fv = np.ascontiguousarray(f, dtype=np.int32)
    cdef Py_ssize_t h = fv.shape[0], w = fv.shape[1]
    cdef Py_ssize_t y, x, dy, yy, lo, hi, half
    prefix_arr = np.zeros((h, w + 1), dtype=np.int32)
    cdef cnp.int32_t[:, ::1] prefix = prefix_arr
    out_arr = np.zeros((h, w), dtype=np.int32)
    cdef cnp.int32_t[:, ::1] out = out_arr
    cdef cnp.int32_t acc
    with nogil:
        for y in range(h):
            for x in range(w):
                prefix[y, x + 1] = prefix[y, x] + fv[y, x]
        for dy in range(-r, r + 1):
            half = 0
            while (half + 1) * (half + 1) + dy * dy <= r * r:
                half += 1
            for y in range(h):
                yy = y + dy
                if yy < 0 or yy >= h:
                    continue
                for x in range(w):
                    lo = x - half
                    hi = x + half + 1
                    if lo < 0:
                        lo = 0
                    if hi > w:
                        hi = w
                    if hi > lo:
                        out[y, x] += prefix[yy, hi] - prefix[yy, lo]
    return out_arr
