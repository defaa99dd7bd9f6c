# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled data-movement kernels for the convolution, pooling and upsampling ops."""

import numpy as np
cimport numpy as cnp
from libc.math cimport floor

cnp.import_array()

NAME = "cython"


cdef inline Py_ssize_t _first_valid(Py_ssize_t k_off, Py_ssize_t stride, Py_ssize_t pad):
    # smallest o with o * stride + k_off - pad >= 0
    cdef Py_ssize_t need = pad - k_off
    if need <= 0:
        return 0
    return (need + stride - 1) // stride


cdef inline Py_ssize_t _last_valid(Py_ssize_t n, Py_ssize_t k_off, Py_ssize_t stride, Py_ssize_t pad,
                                   Py_ssize_t n_out):
    # one past the largest o with o * stride + k_off - pad < n
    cdef Py_ssize_t top = n - 1 + pad - k_off
    if top < 0:
        return 0
    top = top // stride + 1
    return top if top < n_out else n_out


def im2col(const double[:, :, ::1] x, Py_ssize_t k, Py_ssize_t stride, Py_ssize_t pad):
    cdef Py_ssize_t c = x.shape[0], h = x.shape[1], w = x.shape[2]
    cdef Py_ssize_t ho = (h + 2 * pad - k) // stride + 1
    cdef Py_ssize_t wo = (w + 2 * pad - k) // stride + 1
    out_arr = np.empty((c * k * k, ho * wo), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t ci, ky, kx, oy, ox, row, y0, y1, x0, x1, base
    cdef double *dst
    cdef const double *src
    for ci in range(c):
        for ky in range(k):
            y0 = _first_valid(ky, stride, pad)
            y1 = _last_valid(h, ky, stride, pad, ho)
            for kx in range(k):
                row = (ci * k + ky) * k + kx
                x0 = _first_valid(kx, stride, pad)
                x1 = _last_valid(w, kx, stride, pad, wo)
                dst = &out[row, 0]
                for oy in range(ho):
                    base = oy * wo
                    if oy < y0 or oy >= y1 or x1 <= x0:
                        for ox in range(wo):
                            dst[base + ox] = 0.0
                        continue
                    for ox in range(x0):
                        dst[base + ox] = 0.0
                    src = &x[ci, oy * stride + ky - pad, 0]
                    if stride == 1:
                        for ox in range(x0, x1):
                            dst[base + ox] = src[ox + kx - pad]
                    else:
                        for ox in range(x0, x1):
                            dst[base + ox] = src[ox * stride + kx - pad]
                    for ox in range(x1, wo):
                        dst[base + ox] = 0.0
    return out_arr


def col2im(const double[:, ::1] cols, shape, Py_ssize_t k, Py_ssize_t stride, Py_ssize_t pad):
    cdef Py_ssize_t c = shape[0], h = shape[1], w = shape[2]
    cdef Py_ssize_t ho = (h + 2 * pad - k) // stride + 1
    cdef Py_ssize_t wo = (w + 2 * pad - k) // stride + 1
    out_arr = np.zeros((c, h, w), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t ci, ky, kx, oy, ox, iy, ix, row
    # accumulation order (ky, kx) per pixel matches the numpy fallback
    for ci in range(c):
        for ky in range(k):
            for kx in range(k):
                row = (ci * k + ky) * k + kx
                for oy in range(ho):
                    iy = oy * stride + ky - pad
                    if iy < 0 or iy >= h:
                        continue
                    for ox in range(wo):
                        ix = ox * stride + kx - pad
                        if 0 <= ix < w:
                            out[ci, iy, ix] += cols[row, oy * wo + ox]
    return out_arr


def maxpool2x2(const double[:, :, ::1] x):
    cdef Py_ssize_t c = x.shape[0], ho = x.shape[1] // 2, wo = x.shape[2] // 2
    out_arr = np.empty((c, ho, wo), dtype=np.float64)
    idx_arr = np.empty((c, ho, wo), dtype=np.int64)
    cdef double[:, :, ::1] out = out_arr
    cdef cnp.int64_t[:, :, ::1] idx = idx_arr
    cdef Py_ssize_t ci, oy, ox, j
    cdef double best, v
    cdef cnp.int64_t arg
    for ci in range(c):
        for oy in range(ho):
            for ox in range(wo):
                best = x[ci, 2 * oy, 2 * ox]
                arg = 0
                for j in range(1, 4):
                    v = x[ci, 2 * oy + j // 2, 2 * ox + j % 2]
                    if v > best:
                        best = v
                        arg = j
                out[ci, oy, ox] = best
                idx[ci, oy, ox] = arg
    return out_arr, idx_arr


def maxpool2x2_backward(const double[:, :, ::1] g, const cnp.int64_t[:, :, ::1] idx):
    cdef Py_ssize_t c = g.shape[0], ho = g.shape[1], wo = g.shape[2]
    out_arr = np.zeros((c, 2 * ho, 2 * wo), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t ci, oy, ox, j
    for ci in range(c):
        for oy in range(ho):
            for ox in range(wo):
                j = idx[ci, oy, ox]
                out[ci, 2 * oy + j // 2, 2 * ox + j % 2] = g[ci, oy, ox]
    return out_arr


cdef void _taps(Py_ssize_t n, Py_ssize_t[::1] i0, Py_ssize_t[::1] i1, double[::1] w1):
    # output o of a 2x upsample reads source (o + 0.5) / 2 - 0.5, clamped
    cdef Py_ssize_t o, a
    cdef double src
    for o in range(2 * n):
        src = (o + 0.5) * 0.5 - 0.5
        if src < 0.0:
            src = 0.0
        a = <Py_ssize_t>floor(src)
        if a > n - 1:
            a = n - 1
        i0[o] = a
        i1[o] = a + 1 if a + 1 < n else n - 1
        w1[o] = src - a


def upsample2x(const double[:, :, ::1] x):
    cdef Py_ssize_t c = x.shape[0], h = x.shape[1], w = x.shape[2]
    cdef Py_ssize_t[::1] ry0 = np.empty(2 * h, dtype=np.intp)
    cdef Py_ssize_t[::1] ry1 = np.empty(2 * h, dtype=np.intp)
    cdef double[::1] wy = np.empty(2 * h)
    cdef Py_ssize_t[::1] rx0 = np.empty(2 * w, dtype=np.intp)
    cdef Py_ssize_t[::1] rx1 = np.empty(2 * w, dtype=np.intp)
    cdef double[::1] wx = np.empty(2 * w)
    _taps(h, ry0, ry1, wy)
    _taps(w, rx0, rx1, wx)
    out_arr = np.empty((c, 2 * h, 2 * w), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t ci, oy, ox
    cdef double top, bot
    for ci in range(c):
        for oy in range(2 * h):
            for ox in range(2 * w):
                top = (1.0 - wx[ox]) * x[ci, ry0[oy], rx0[ox]] + wx[ox] * x[ci, ry0[oy], rx1[ox]]
                bot = (1.0 - wx[ox]) * x[ci, ry1[oy], rx0[ox]] + wx[ox] * x[ci, ry1[oy], rx1[ox]]
                out[ci, oy, ox] = (1.0 - wy[oy]) * top + wy[oy] * bot
    return out_arr


def upsample2x_backward(const double[:, :, ::1] g):
    cdef Py_ssize_t c = g.shape[0], h = g.shape[1] // 2, w = g.shape[2] // 2
    cdef Py_ssize_t[::1] ry0 = np.empty(2 * h, dtype=np.intp)
    cdef Py_ssize_t[::1] ry1 = np.empty(2 * h, dtype=np.intp)
    cdef double[::1] wy = np.empty(2 * h)
    cdef Py_ssize_t[::1] rx0 = np.empty(2 * w, dtype=np.intp)
    cdef Py_ssize_t[::1] rx1 = np.empty(2 * w, dtype=np.intp)
    cdef double[::1] wx = np.empty(2 * w)
    _taps(h, ry0, ry1, wy)
    _taps(w, rx0, rx1, wx)
    out_arr = np.zeros((c, h, w), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t ci, oy, ox
    cdef double v
    for ci in range(c):
        for oy in range(2 * h):
            for ox in range(2 * w):
                v = g[ci, oy, ox]
                out[ci, ry0[oy], rx0[ox]] += (1.0 - wy[oy]) * (1.0 - wx[ox]) * v
                out[ci, ry0[oy], rx1[ox]] += (1.0 - wy[oy]) * wx[ox] * v
                out[ci, ry1[oy], rx0[ox]] += wy[oy] * (1.0 - wx[ox]) * v
                out[ci, ry1[oy], rx1[ox]] += wy[oy] * wx[ox] * v
    return out_arr
