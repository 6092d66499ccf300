"""Deterministic frame pre-processing, feature extraction, and reduction.

Everything here is a pure function: equal inputs give bit-equal outputs.
Pixel loops run through ``siat._kernels`` (compiled when available); matrix
work uses float64 numpy arrays, with feature matrices laid out one sample
per row.

Rounding is half-up (``floor(x + 0.5)``) everywhere a real value becomes a
pixel, and grayscale uses the BT.601 weights 0.299/0.587/0.114.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import (
    BadBins,
    BadK,
    BadPolicy,
    DidNotConverge,
    DimMismatch,
    MixedFrameShapes,
    TooFewFrames,
)
from .framewire import Frame, MiniBatch, PixelFormat

__all__ = [
    "to_grayscale", "resize", "adjust", "equalize", "crop",
    "detect_shot_boundaries", "extract_frames", "histogram_feature",
    "motion_energy", "PCAModel", "pca_fit", "pca_transform", "variance_select",
    "as_matrix",
]


# --- frame operations -------------------------------------------------------

def to_grayscale(frame: Frame) -> Frame:
    """Convert RGB24 to GRAY8 (Y = round(.299R + .587G + .114B)); GRAY8 passes through."""
    if frame.pixel_format is PixelFormat.GRAY8:
        return frame
    pixels = _kernels.gray_from_rgb24(frame.pixels, frame.pixel_count)
    return Frame(frame.width, frame.height, PixelFormat.GRAY8, pixels)


def resize(frame: Frame, width: int, height: int, method: str = "NEAREST") -> Frame:
    if width < 1 or height < 1:
        raise ValueError("target dimensions must be >= 1")
    if width == frame.width and height == frame.height:
        return frame
    ch = frame.pixel_format.channels
    if method == "NEAREST":
        pixels = _kernels.resize_nearest(frame.pixels, frame.width, frame.height,
                                         ch, width, height)
    elif method == "BILINEAR":
        pixels = _kernels.resize_bilinear(frame.pixels, frame.width, frame.height,
                                          ch, width, height)
    else:
        raise ValueError(f"unknown resize method {method!r}")
    return Frame(width, height, frame.pixel_format, pixels)


def _require_gray(frame: Frame, op: str) -> None:
    if frame.pixel_format is not PixelFormat.GRAY8:
        raise ValueError(f"{op} requires a GRAY8 frame")


def adjust(frame: Frame, alpha: float, beta: float) -> Frame:
    """Linear tone map p' = clamp(round(alpha*p + beta), 0, 255)."""
    _require_gray(frame, "adjust")
    return Frame(frame.width, frame.height, PixelFormat.GRAY8,
                 _kernels.adjust_u8(frame.pixels, float(alpha), float(beta)))


def equalize(frame: Frame) -> Frame:
    """Histogram equalization by CDF remap; constant frames pass through."""
    _require_gray(frame, "equalize")
    npix = frame.pixel_count
    if npix == 0:
        return frame
    counts = _kernels.histogram_counts(frame.pixels, 256)
    cdf = 0
    cdf_min = next(c for c in counts if c)  # first populated bin
    # walk once more to build the cumulative LUT
    lut = bytearray(256)
    denom = npix - cdf_min
    if denom == 0:
        return frame
    for v in range(256):
        cdf += counts[v]
        y = math.floor((cdf - cdf_min) * 255 / denom + 0.5)
        lut[v] = min(max(y, 0), 255)
    return Frame(frame.width, frame.height, PixelFormat.GRAY8,
                 frame.pixels.translate(bytes(lut)))


def crop(frame: Frame, x: int, y: int, width: int, height: int) -> Frame:
    if x < 0 or y < 0 or width < 1 or height < 1:
        raise ValueError("crop rectangle must be positive and in-bounds")
    if x + width > frame.width or y + height > frame.height:
        raise ValueError("crop rectangle exceeds frame bounds")
    ch = frame.pixel_format.channels
    stride = frame.width * ch
    rows = [
        frame.pixels[r * stride + x * ch : r * stride + (x + width) * ch]
        for r in range(y, y + height)
    ]
    return Frame(width, height, frame.pixel_format, b"".join(rows))


def _mad(a: Frame, b: Frame) -> float:
    if a.width != b.width or a.height != b.height or a.pixel_format != b.pixel_format:
        raise MixedFrameShapes("frames differ in shape or format")
    n = len(a.pixels)
    if n == 0:
        return 0.0
    return _kernels.sum_abs_diff(a.pixels, b.pixels) / n


def detect_shot_boundaries(frames: list[Frame], tau: float) -> list[int]:
    """Indices t >= 1 where the mean absolute difference to frame t-1 exceeds tau."""
    if tau < 0:
        raise ValueError("tau must be >= 0")
    return [t for t in range(1, len(frames)) if _mad(frames[t], frames[t - 1]) > tau]


def motion_energy(frames: list[Frame]) -> list[float]:
    """Mean absolute inter-frame differences; entry t-1 covers the (t-1, t) pair."""
    if len(frames) < 2:
        raise TooFewFrames(f"need >= 2 frames, got {len(frames)}")
    return [_mad(frames[t], frames[t - 1]) for t in range(1, len(frames))]


def extract_frames(batch: MiniBatch, policy: str, step: int = 1,
                   tau: float = 0.0) -> list[tuple[int, Frame]]:
    """Select candidate frames: ALL, every STEP-th, or KEY (first frame per shot)."""
    frames = list(batch.frames)
    if policy == "ALL":
        return list(enumerate(frames))
    if policy == "STEP":
        if step < 1:
            raise BadPolicy(f"STEP requires step >= 1, got {step}")
        return [(i, f) for i, f in enumerate(frames) if i % step == 0]
    if policy == "KEY":
        if tau < 0:
            raise BadPolicy(f"KEY requires tau >= 0, got {tau}")
        if not frames:
            return []
        gray = [to_grayscale(f) for f in frames]
        keep = [0] + detect_shot_boundaries(gray, tau)
        return [(i, frames[i]) for i in keep]
    raise BadPolicy(f"unknown policy {policy!r}")


def histogram_feature(frame: Frame, bins: int) -> list[float]:
    """L1-normalized intensity histogram; bin = floor(p * bins / 256)."""
    if bins < 1 or 256 % bins != 0:
        raise BadBins(f"bins must divide 256, got {bins}")
    _require_gray(frame, "histogram_feature")
    npix = frame.pixel_count
    if npix == 0:
        return [0.0] * bins
    counts = _kernels.histogram_counts(frame.pixels, bins)
    return [c / npix for c in counts]


# --- PCA and feature selection ----------------------------------------------

def as_matrix(X, min_rows: int = 0) -> np.ndarray:
    """Coerce to a finite float64 (n, d) matrix with d >= 1."""
    A = np.asarray(X, dtype=np.float64)
    if A.ndim != 2 or A.shape[1] < 1:
        raise ValueError(f"expected a 2-D matrix with >= 1 column, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix entries must be finite")
    if A.shape[0] < min_rows:
        raise ValueError(f"need at least {min_rows} rows, got {A.shape[0]}")
    return A


@dataclass
class PCAModel:
    """Mean, orthonormal components (rows), and non-increasing eigenvalues."""

    mean: np.ndarray
    components: np.ndarray
    eigenvalues: np.ndarray

    def to_json_dict(self) -> dict:
        return {
            "kind": "pca",
            "mean": self.mean.tolist(),
            "components": self.components.tolist(),
            "eigenvalues": self.eigenvalues.tolist(),
        }

    @staticmethod
    def from_json_dict(d: dict) -> "PCAModel":
        return PCAModel(
            mean=np.asarray(d["mean"], dtype=np.float64),
            components=np.asarray(d["components"], dtype=np.float64),
            eigenvalues=np.asarray(d["eigenvalues"], dtype=np.float64),
        )


def _orth_against(v: np.ndarray, comps: list[np.ndarray]) -> np.ndarray:
    for u in comps:
        v = v - (v @ u) * u
    return v


def _completion_vector(comps: list[np.ndarray], d: int) -> np.ndarray:
    # deterministic unit vector orthogonal to everything found so far
    candidates = [np.ones(d)] + [np.eye(d)[i] for i in range(d)]
    for c in candidates:
        w = _orth_against(c, comps)
        norm = float(np.linalg.norm(w))
        if norm > 1e-6:
            return w / norm
    raise DidNotConverge("no orthogonal direction left")  # k <= d prevents this


def _sign_fix(v: np.ndarray) -> np.ndarray:
    for x in v:
        if abs(x) > 1e-12:
            return v if x > 0 else -v
    return v


def pca_fit(X, k: int, tol: float = 1e-10, max_iter: int = 1000) -> PCAModel:
    """Top-k eigenpairs of the sample covariance via power iteration + deflation.

    The start vector is the normalized all-ones vector; if the residual
    stalls the first coordinate is perturbed by 1e-3 and the iteration
    restarts (then falls back to basis-vector starts).  Components are
    re-orthogonalized against accepted ones every iteration, and each
    component's sign is fixed so its first nonzero entry is positive.
    """
    A = as_matrix(X, min_rows=2)
    n, d = A.shape
    if not 1 <= k <= d:
        raise BadK(f"k must be in [1, {d}], got {k}")
    mean = A.mean(axis=0)
    Xc = A - mean
    C = (Xc.T @ Xc) / (n - 1)
    scale = max(1.0, float(np.linalg.norm(C)))

    work = C.copy()
    comps: list[np.ndarray] = []
    eigs: list[float] = []
    ones = np.ones(d) / math.sqrt(d)
    perturbed = ones.copy()
    perturbed[0] += 1e-3
    perturbed /= np.linalg.norm(perturbed)
    starts = [ones, perturbed] + [np.eye(d)[i] for i in range(d)]

    for _ in range(k):
        if float(np.linalg.norm(work)) <= 1e-12 * scale:
            # nothing left: remaining eigenvalues are zero
            v = _completion_vector(comps, d)
            lam = 0.0
        else:
            lam, v = _power_iteration(work, comps, starts, tol, max_iter, scale)
        lam = max(lam, 0.0)
        if eigs:
            lam = min(lam, eigs[-1])  # guard against deflation round-off
        comps.append(v)
        eigs.append(lam)
        work = work - lam * np.outer(v, v)

    components = np.array([_sign_fix(v) for v in comps])
    return PCAModel(mean=mean, components=components,
                    eigenvalues=np.array(eigs, dtype=np.float64))


def _power_iteration(work, comps, starts, tol, max_iter, scale):
    # the achievable residual floor scales with the whole matrix (deflation
    # carries the leading eigenvalue's round-off), so the target does too
    target = tol * scale
    for v0 in starts:
        v = _orth_against(v0.copy(), comps)
        norm = float(np.linalg.norm(v))
        if norm < 1e-12:
            continue
        v /= norm
        best = math.inf
        stall = 0
        for _ in range(max_iter):
            w = _orth_against(work @ v, comps)
            norm = float(np.linalg.norm(w))
            if norm < 1e-30:
                break  # start vector lies in the null space; try the next one
            v = w / norm
            wv = work @ v
            lam = float(v @ wv)
            res = float(np.linalg.norm(wv - lam * v))
            if res <= target:
                return lam, v
            if res >= best * (1 - 1e-12):
                stall += 1
                if stall > 50:
                    break  # stalled; restart from the next start vector
            else:
                best = res
                stall = 0
    raise DidNotConverge(f"power iteration did not reach tol={tol} in {max_iter} steps")


def pca_transform(model: PCAModel, X) -> np.ndarray:
    A = as_matrix(X)
    d = model.components.shape[1]
    if A.shape[1] != d:
        raise DimMismatch(f"matrix has {A.shape[1]} columns, model expects {d}")
    return (A - model.mean) @ model.components.T


def variance_select(X, tau: float) -> list[int]:
    """Column indices whose sample variance exceeds tau, ascending."""
    A = as_matrix(X, min_rows=2)
    var = A.var(axis=0, ddof=1)
    return [int(i) for i in np.nonzero(var > tau)[0]]
