# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels. Must stay bit-identical to ``_kernels_py``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport floor
from libc.stdint cimport int64_t

cnp.import_array()


cdef void _axis(Py_ssize_t n_in, Py_ssize_t n_out, Py_ssize_t[::1] lo,
                Py_ssize_t[::1] hi, double[::1] frac) noexcept:
    cdef Py_ssize_t i, l
    cdef double pos
    for i in range(n_out):
        if n_out == 1 or n_in == 1:
            pos = 0.0
        else:
            pos = <double>i * <double>(n_in - 1) / <double>(n_out - 1)
        l = <Py_ssize_t>floor(pos)
        if l > n_in - 1:
            l = n_in - 1
        lo[i] = l
        hi[i] = l + 1 if l + 1 < n_in else n_in - 1
        frac[i] = pos - <double>l


def resize_bilinear(frames, Py_ssize_t out_h, Py_ssize_t out_w):
    cdef const cnp.uint8_t[:, :, ::1] src = np.ascontiguousarray(frames, dtype=np.uint8)
    cdef Py_ssize_t t = src.shape[0], h = src.shape[1], w = src.shape[2]
    out_arr = np.empty((t, out_h, out_w), dtype=np.uint8)
    cdef cnp.uint8_t[:, :, ::1] out = out_arr
    y0_a = np.empty(out_h, dtype=np.intp)
    y1_a = np.empty(out_h, dtype=np.intp)
    wy_a = np.empty(out_h, dtype=np.float64)
    x0_a = np.empty(out_w, dtype=np.intp)
    x1_a = np.empty(out_w, dtype=np.intp)
    wx_a = np.empty(out_w, dtype=np.float64)
    cdef Py_ssize_t[::1] y0 = y0_a, y1 = y1_a, x0 = x0_a, x1 = x1_a
    cdef double[::1] wy = wy_a, wx = wx_a
    _axis(h, out_h, y0, y1, wy)
    _axis(w, out_w, x0, x1, wx)

    cdef Py_ssize_t k, i, j
    cdef double a, b, c, d, top, bot, val, fy, fx
    with nogil:
        for k in range(t):
            for i in range(out_h):
                fy = wy[i]
                for j in range(out_w):
                    fx = wx[j]
                    a = src[k, y0[i], x0[j]]
                    b = src[k, y0[i], x1[j]]
                    c = src[k, y1[i], x0[j]]
                    d = src[k, y1[i], x1[j]]
                    top = (1.0 - fx) * a + fx * b
                    bot = (1.0 - fx) * c + fx * d
                    val = floor((1.0 - fy) * top + fy * bot + 0.5)
                    if val < 0.0:
                        val = 0.0
                    elif val > 255.0:
                        val = 255.0
                    out[k, i, j] = <cnp.uint8_t>val
    return out_arr


cdef inline int64_t _median2_u8(const cnp.uint8_t[::1] row, int64_t* hist) noexcept nogil:
    cdef Py_ssize_t n = row.shape[0], c, v
    cdef Py_ssize_t lo_idx = (n - 1) // 2, hi_idx = n // 2
    cdef int64_t cum = 0, lo = -1, hi = -1
    for v in range(256):
        hist[v] = 0
    for c in range(n):
        hist[row[c]] += 1
    for v in range(256):
        cum += hist[v]
        if lo < 0 and cum > lo_idx:
            lo = v
        if cum > hi_idx:
            hi = v
            break
    return lo + hi


def row_centroids(frames):
    cdef const cnp.uint8_t[:, :, ::1] src = np.ascontiguousarray(frames, dtype=np.uint8)
    cdef Py_ssize_t t = src.shape[0], h = src.shape[1]
    cent_a = np.empty(t, dtype=np.float64)
    valid_a = np.zeros(t, dtype=bool)
    level_a = np.empty(h, dtype=np.int64)
    sorted_a = np.empty(h, dtype=np.int64)
    cdef double[::1] cent = cent_a
    cdef cnp.npy_bool[::1] valid = valid_a
    cdef int64_t[::1] level = level_a
    cdef int64_t hist[256]
    cdef Py_ssize_t k, r
    cdef int64_t med4, wgt, total, num
    for k in range(t):
        with nogil:
            for r in range(h):
                level[r] = _median2_u8(src[k, r], hist)
        # row levels range over 0..510, beyond the byte histogram
        sorted_a[:] = level_a
        sorted_a.sort()
        med4 = sorted_a[(h - 1) // 2] + sorted_a[h // 2]
        with nogil:
            total = 0
            num = 0
            for r in range(h):
                wgt = 2 * level[r] - med4
                if wgt > 0:
                    total += wgt
                    num += r * wgt
            if total == 0:
                cent[k] = (h - 1) / 2.0
            else:
                cent[k] = <double>num / <double>total
                valid[k] = 1
    return cent_a, valid_a
