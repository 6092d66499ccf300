"""Pure-Python pixel kernels.

Fallback used when the compiled extension is unavailable (or when
SIAT_PURE_KERNELS=1).  Every function here must produce bit-identical
output to its counterpart in ``_native.pyx``: keep the floating-point
expressions in the same evaluation order in both files.
"""

from __future__ import annotations

from math import floor

# contribution tables so the hot loop does lookups instead of multiplies;
# table entries are exactly 0.299*r etc., so the summed expression matches
# the native kernel's 0.299*r + 0.587*g + 0.114*b term for term
_R_TAB = [0.299 * v for v in range(256)]
_G_TAB = [0.587 * v for v in range(256)]
_B_TAB = [0.114 * v for v in range(256)]


def gray_from_rgb24(rgb: bytes, npix: int) -> bytes:
    out = bytearray(npix)
    r_tab, g_tab, b_tab = _R_TAB, _G_TAB, _B_TAB
    for i in range(npix):
        j = 3 * i
        y = floor(r_tab[rgb[j]] + g_tab[rgb[j + 1]] + b_tab[rgb[j + 2]] + 0.5)
        if y < 0:
            y = 0
        elif y > 255:
            y = 255
        out[i] = y
    return bytes(out)


def adjust_u8(data: bytes, alpha: float, beta: float) -> bytes:
    lut = bytearray(256)
    for v in range(256):
        y = floor(alpha * v + beta + 0.5)
        if y < 0:
            y = 0
        elif y > 255:
            y = 255
        lut[v] = y
    return data.translate(bytes(lut))


def resize_nearest(src: bytes, sw: int, sh: int, ch: int, dw: int, dh: int) -> bytes:
    out = bytearray(dw * dh * ch)
    row_stride = sw * ch
    xs = [min(int((x + 0.5) * sw / dw), sw - 1) for x in range(dw)]
    pos = 0
    for y in range(dh):
        sy = min(int((y + 0.5) * sh / dh), sh - 1)
        base = sy * row_stride
        for sx in xs:
            p = base + sx * ch
            for c in range(ch):
                out[pos] = src[p + c]
                pos += 1
    return bytes(out)


def resize_bilinear(src: bytes, sw: int, sh: int, ch: int, dw: int, dh: int) -> bytes:
    out = bytearray(dw * dh * ch)
    row_stride = sw * ch
    # precompute per-axis sample positions and weights
    xw = []
    for x in range(dw):
        fx = (x + 0.5) * sw / dw - 0.5
        if fx < 0.0:
            fx = 0.0
        x0 = int(fx)
        if x0 > sw - 1:
            x0 = sw - 1
        x1 = x0 + 1 if x0 + 1 < sw else sw - 1
        xw.append((x0, x1, fx - x0))
    pos = 0
    for y in range(dh):
        fy = (y + 0.5) * sh / dh - 0.5
        if fy < 0.0:
            fy = 0.0
        y0 = int(fy)
        if y0 > sh - 1:
            y0 = sh - 1
        y1 = y0 + 1 if y0 + 1 < sh else sh - 1
        ty = fy - y0
        base0 = y0 * row_stride
        base1 = y1 * row_stride
        for x0, x1, tx in xw:
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
                out[pos] = y8
                pos += 1
    return bytes(out)


def sum_abs_diff(a: bytes, b: bytes) -> int:
    total = 0
    for x, y in zip(a, b):
        total += x - y if x >= y else y - x
    return total


def histogram_counts(data: bytes, bins: int) -> list[int]:
    counts = [0] * bins
    if bins == 256:
        for v in data:
            counts[v] += 1
    else:
        for v in data:
            counts[v * bins // 256] += 1
    return counts
