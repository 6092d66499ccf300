# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled pixel kernels.

Bit-identical twin of ``pure.py``: float expressions are kept in the same
evaluation order so both implementations agree byte for byte.
"""

from libc.math cimport floor


def gray_from_rgb24(const unsigned char[::1] rgb, Py_ssize_t npix):
    out = bytearray(npix)
    cdef unsigned char[::1] o = out
    cdef Py_ssize_t i, j
    cdef double y
    for i in range(npix):
        j = 3 * i
        y = floor(0.299 * rgb[j] + 0.587 * rgb[j + 1] + 0.114 * rgb[j + 2] + 0.5)
        if y < 0:
            y = 0
        elif y > 255:
            y = 255
        o[i] = <unsigned char> y
    return bytes(out)


def adjust_u8(const unsigned char[::1] data, double alpha, double beta):
    cdef Py_ssize_t n = data.shape[0]
    out = bytearray(n)
    cdef unsigned char[::1] o = out
    cdef unsigned char lut[256]
    cdef double y
    cdef int v
    for v in range(256):
        y = floor(alpha * v + beta + 0.5)
        if y < 0:
            y = 0
        elif y > 255:
            y = 255
        lut[v] = <unsigned char> y
    cdef Py_ssize_t i
    for i in range(n):
        o[i] = lut[data[i]]
    return bytes(out)


def resize_nearest(const unsigned char[::1] src, Py_ssize_t sw, Py_ssize_t sh,
                   Py_ssize_t ch, Py_ssize_t dw, Py_ssize_t dh):
    out = bytearray(dw * dh * ch)
    cdef unsigned char[::1] o = out
    cdef Py_ssize_t row_stride = sw * ch
    cdef Py_ssize_t x, y, c, sx, sy, base, p, pos = 0
    for y in range(dh):
        sy = <Py_ssize_t> ((y + 0.5) * sh / dh)
        if sy > sh - 1:
            sy = sh - 1
        base = sy * row_stride
        for x in range(dw):
            sx = <Py_ssize_t> ((x + 0.5) * sw / dw)
            if sx > sw - 1:
                sx = sw - 1
            p = base + sx * ch
            for c in range(ch):
                o[pos] = src[p + c]
                pos += 1
    return bytes(out)


def resize_bilinear(const unsigned char[::1] src, Py_ssize_t sw, Py_ssize_t sh,
                    Py_ssize_t ch, Py_ssize_t dw, Py_ssize_t dh):
    out = bytearray(dw * dh * ch)
    cdef unsigned char[::1] o = out
    cdef Py_ssize_t row_stride = sw * ch
    cdef Py_ssize_t x, y, c, x0, x1, y0, y1, base0, base1, p00, p01, p10, p11
    cdef Py_ssize_t pos = 0
    cdef double fx, fy, tx, ty, v, y8
    for y in range(dh):
        fy = (y + 0.5) * sh / dh - 0.5
        if fy < 0.0:
            fy = 0.0
        y0 = <Py_ssize_t> fy
        if y0 > sh - 1:
            y0 = sh - 1
        y1 = y0 + 1 if y0 + 1 < sh else sh - 1
        ty = fy - y0
        base0 = y0 * row_stride
        base1 = y1 * row_stride
        for x in range(dw):
            fx = (x + 0.5) * sw / dw - 0.5
            if fx < 0.0:
                fx = 0.0
            x0 = <Py_ssize_t> fx
            if x0 > sw - 1:
                x0 = sw - 1
            x1 = x0 + 1 if x0 + 1 < sw else sw - 1
            tx = fx - x0
            p00 = base0 + x0 * ch
            p01 = base0 + x1 * ch
            p10 = base1 + x0 * ch
            p11 = base1 + x1 * ch
            for c in range(ch):
                v = (1.0 - ty) * ((1.0 - tx) * src[p00 + c] + tx * src[p01 + c]) + ty * (
                    (1.0 - tx) * src[p10 + c] + tx * src[p11 + c]
                )
                y8 = floor(v + 0.5)
                if y8 < 0:
                    y8 = 0
                elif y8 > 255:
                    y8 = 255
                o[pos] = <unsigned char> y8
                pos += 1
    return bytes(out)


def sum_abs_diff(const unsigned char[::1] a, const unsigned char[::1] b):
    cdef Py_ssize_t n = a.shape[0]
    cdef long long total = 0
    cdef Py_ssize_t i
    cdef int d
    for i in range(n):
        d = a[i] - b[i]
        total += d if d >= 0 else -d
    return total


def histogram_counts(const unsigned char[::1] data, int bins):
    cdef Py_ssize_t n = data.shape[0]
    cdef long long counts[256]
    cdef int i
    for i in range(256):
        counts[i] = 0
    cdef Py_ssize_t j
    if bins == 256:
        for j in range(n):
            counts[data[j]] += 1
    else:
        for j in range(n):
            counts[(data[j] * bins) // 256] += 1
    return [counts[i] for i in range(bins)]
