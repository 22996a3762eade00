# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the loop-bound kernels in :mod:`quadfuse._pykernels`.

Every function here must return bit-identical results to its fallback twin.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport floor
from libc.stdint cimport uint64_t, int64_t

cnp.import_array()


cdef inline uint64_t _rotl(uint64_t x, int k) nogil:
    return (x << k) | (x >> (64 - k))


cdef inline uint64_t _next(uint64_t* s) nogil:
    cdef uint64_t result = _rotl(s[1] * 5, 7) * 9
    cdef uint64_t t = s[1] << 17
    s[2] ^= s[0]
    s[3] ^= s[1]
    s[1] ^= s[2]
    s[0] ^= s[3]
    s[2] ^= t
    s[3] = _rotl(s[3], 45)
    return result


def xoshiro_fill_u64(cnp.uint64_t[::1] state, cnp.uint64_t[::1] out):
    cdef uint64_t s[4]
    cdef Py_ssize_t i, n = out.shape[0]
    for i in range(4):
        s[i] = state[i]
    with nogil:
        for i in range(n):
            out[i] = _next(s)
    for i in range(4):
        state[i] = s[i]


def xoshiro_fill_uniform(cnp.uint64_t[::1] state, double[::1] out):
    cdef uint64_t s[4]
    cdef Py_ssize_t i, n = out.shape[0]
    cdef double scale = 1.0 / 9007199254740992.0
    for i in range(4):
        s[i] = state[i]
    with nogil:
        for i in range(n):
            out[i] = <double>(_next(s) >> 11) * scale
    for i in range(4):
        state[i] = s[i]


def equalize_u8(cnp.uint8_t[:, ::1] img):
    cdef Py_ssize_t h = img.shape[0], w = img.shape[1], y, x
    cdef int64_t hist[256]
    cdef int64_t cdf[256]
    cdef cnp.uint8_t lut[256]
    cdef int64_t total = h * w, cdf_min = 0, denom, acc = 0
    cdef int v
    out = np.empty((h, w), dtype=np.uint8)
    cdef cnp.uint8_t[:, ::1] o = out
    for v in range(256):
        hist[v] = 0
    for y in range(h):
        for x in range(w):
            hist[img[y, x]] += 1
    for v in range(256):
        acc += hist[v]
        cdf[v] = acc
        if cdf_min == 0 and hist[v] > 0:
            cdf_min = cdf[v]
    denom = total - cdf_min
    if denom == 0:
        o[:, :] = img
        return out
    for v in range(256):
        if cdf[v] < cdf_min:
            lut[v] = 0
        else:
            lut[v] = <cnp.uint8_t>((2 * (cdf[v] - cdf_min) * 255 + denom) // (2 * denom))
    for y in range(h):
        for x in range(w):
            o[y, x] = lut[img[y, x]]
    return out


def warp_bilinear(float[:, :, ::1] img, bint flip, double a11, double a12,
                  double a21, double a22):
    cdef Py_ssize_t c = img.shape[0], h = img.shape[1], w = img.shape[2]
    cdef Py_ssize_t ch, y, x, x0, y0
    cdef double cx = (w - 1) / 2.0, cy = (h - 1) / 2.0
    cdef double dx, dy, sx, sy, fx, fy, p00, p01, p10, p11, val
    out = np.zeros((c, h, w), dtype=np.float32)
    cdef float[:, :, ::1] o = out
    with nogil:
        for y in range(h):
            dy = y - cy
            for x in range(w):
                dx = x - cx
                sx = cx + (a11 * dx + a12 * dy)
                sy = cy + (a21 * dx + a22 * dy)
                if flip:
                    sx = (w - 1) - sx
                x0 = <Py_ssize_t>floor(sx)
                y0 = <Py_ssize_t>floor(sy)
                if x0 < -1 or y0 < -1 or x0 >= w or y0 >= h:
                    continue
                fx = sx - x0
                fy = sy - y0
                for ch in range(c):
                    p00 = img[ch, y0, x0] if (0 <= x0 < w and 0 <= y0 < h) else 0.0
                    p01 = img[ch, y0, x0 + 1] if (0 <= x0 + 1 < w and 0 <= y0 < h) else 0.0
                    p10 = img[ch, y0 + 1, x0] if (0 <= x0 < w and 0 <= y0 + 1 < h) else 0.0
                    p11 = img[ch, y0 + 1, x0 + 1] if (0 <= x0 + 1 < w and 0 <= y0 + 1 < h) else 0.0
                    val = ((1.0 - fx) * (1.0 - fy) * p00 + fx * (1.0 - fy) * p01) \
                        + ((1.0 - fx) * fy * p10 + fx * fy * p11)
                    o[ch, y, x] = <float>val
    return out
