"""Pixel-kernel selection: compiled extension when available, pure Python otherwise.

Set SIAT_PURE_KERNELS=1 to force the fallback (used by the benchmark and by
the equivalence tests).  Both implementations are bit-identical by contract.
"""

from __future__ import annotations

import os

if os.environ.get("SIAT_PURE_KERNELS") == "1":
    from . import pure as _impl

    IMPLEMENTATION = "pure"
else:
    try:
        from . import _native as _impl  # type: ignore[attr-defined]

        IMPLEMENTATION = "native"
    except ImportError:  # extension not built
        from . import pure as _impl

        IMPLEMENTATION = "pure"

gray_from_rgb24 = _impl.gray_from_rgb24
adjust_u8 = _impl.adjust_u8
resize_nearest = _impl.resize_nearest
resize_bilinear = _impl.resize_bilinear
sum_abs_diff = _impl.sum_abs_diff
histogram_counts = _impl.histogram_counts

__all__ = [
    "IMPLEMENTATION",
    "gray_from_rgb24",
    "adjust_u8",
    "resize_nearest",
    "resize_bilinear",
    "sum_abs_diff",
    "histogram_counts",
]
