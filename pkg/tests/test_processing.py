import math
import random

import numpy as np
import pytest

from siat import errors
from siat.framewire import Compression, Frame, MiniBatch, PixelFormat
from siat.processing import (
    adjust,
    as_matrix,
    crop,
    detect_shot_boundaries,
    equalize,
    extract_frames,
    histogram_feature,
    motion_energy,
    pca_fit,
    pca_transform,
    resize,
    to_grayscale,
    variance_select,
)

from conftest import make_frame
from oracles import eigh_oracle, separated_spectrum_matrix


# --- grayscale ----------------------------------------------------------------

def rgb_frame(*pixels):
    flat = bytes(c for px in pixels for c in px)
    return Frame(len(pixels), 1, PixelFormat.RGB24, flat)


def test_grayscale_red():
    assert to_grayscale(rgb_frame((255, 0, 0))).pixels == bytes([76])


def test_grayscale_white_and_black():
    f = to_grayscale(rgb_frame((255, 255, 255), (0, 0, 0)))
    assert f.pixels == bytes([255, 0])


def test_grayscale_gray_passthrough():
    f = make_frame(3, 3, fill=7)
    assert to_grayscale(f) is f


def test_grayscale_pointwise():
    # a pointwise map commutes with consistent pixel permutation
    rng = random.Random(1)
    pixels = [tuple(rng.randrange(256) for _ in range(3)) for _ in range(16)]
    direct = to_grayscale(rgb_frame(*pixels)).pixels
    perm = list(range(16))
    rng.shuffle(perm)
    permuted = to_grayscale(rgb_frame(*(pixels[i] for i in perm))).pixels
    assert permuted == bytes(direct[i] for i in perm)


# --- resize ---------------------------------------------------------------------

def test_resize_identity():
    f = make_frame(5, 4, rng=random.Random(2))
    assert resize(f, 5, 4, "NEAREST") == f
    assert resize(f, 5, 4, "BILINEAR") == f


def test_resize_nearest_2x2_to_1x1():
    f = Frame(2, 2, PixelFormat.GRAY8, bytes([0, 255, 0, 255]))
    assert resize(f, 1, 1, "NEAREST").pixels == bytes([255])


def test_resize_nearest_index_formula():
    f = Frame(4, 1, PixelFormat.GRAY8, bytes([10, 20, 30, 40]))
    out = resize(f, 2, 1, "NEAREST")
    # src index = floor((i + 0.5) * 4 / 2) -> 1, 3
    assert out.pixels == bytes([20, 40])


def test_resize_bilinear_constant():
    f = make_frame(3, 3, fill=77)
    for w, h in ((1, 1), (7, 2), (9, 9)):
        assert set(resize(f, w, h, "BILINEAR").pixels) == {77}


def test_resize_bilinear_midpoint():
    f = Frame(2, 1, PixelFormat.GRAY8, bytes([0, 100]))
    out = resize(f, 3, 1, "BILINEAR")
    # fx = -1/6 (clamped to 0), 1/2, 7/6 (x0=1) -> 0, 50, 100
    assert out.pixels == bytes([0, 50, 100])


def test_resize_rgb_channels_independent():
    f = rgb_frame((10, 200, 30), (50, 100, 90))
    out = resize(f, 1, 1, "BILINEAR")
    assert out.pixels == bytes([30, 150, 60])


# --- adjust / equalize / crop ------------------------------------------------------

def test_adjust_identity():
    f = make_frame(4, 4, rng=random.Random(3))
    assert adjust(f, 1.0, 0.0) == f


def test_adjust_clamps():
    f = make_frame(1, 1, fill=200)
    assert adjust(f, 2.0, 0.0).pixels == bytes([255])
    assert adjust(f, -1.0, 0.0).pixels == bytes([0])


def test_adjust_constant():
    f = make_frame(2, 2, fill=99)
    assert adjust(f, 0.0, 17.0).pixels == bytes([17] * 4)


def test_adjust_round_half_up():
    f = Frame(2, 1, PixelFormat.GRAY8, bytes([1, 2]))
    assert adjust(f, 0.5, 0.0).pixels == bytes([1, 1])  # 0.5 -> 1, 1.0 -> 1


def test_equalize_spreads_histogram():
    f = Frame(4, 1, PixelFormat.GRAY8, bytes([100, 100, 101, 101]))
    out = equalize(f)
    assert out.pixels == bytes([0, 0, 255, 255])


def test_equalize_constant_passthrough():
    f = make_frame(3, 3, fill=42)
    assert equalize(f) == f


def test_crop():
    f = Frame(4, 3, PixelFormat.GRAY8, bytes(range(12)))
    out = crop(f, 1, 1, 2, 2)
    assert (out.width, out.height) == (2, 2)
    assert out.pixels == bytes([5, 6, 9, 10])
    with pytest.raises(ValueError):
        crop(f, 3, 0, 2, 1)


# --- shot boundaries and motion -------------------------------------------------

def fills(*values, w=4, h=4):
    return [make_frame(w, h, fill=v) for v in values]


def test_boundaries_constant_sequence():
    assert detect_shot_boundaries(fills(9, 9, 9, 9), 0.0) == []


def test_boundaries_step_change():
    frames = fills(*([0] * 5 + [255] * 5))
    assert detect_shot_boundaries(frames, 50.0) == [5]


def test_boundaries_tau_above_max():
    frames = fills(0, 255, 0, 255)
    assert detect_shot_boundaries(frames, 300.0) == []


def test_boundaries_strictly_increasing_in_range():
    rng = random.Random(4)
    frames = [make_frame(6, 6, rng=rng) for _ in range(20)]
    out = detect_shot_boundaries(frames, 10.0)
    assert out == sorted(set(out))
    assert all(1 <= t < 20 for t in out)


def test_boundaries_mixed_shapes():
    with pytest.raises(errors.MixedFrameShapes):
        detect_shot_boundaries([make_frame(2, 2, fill=0), make_frame(3, 2, fill=0)], 0)


def test_motion_energy_values():
    assert motion_energy(fills(5, 5, 5)) == [0.0, 0.0]
    assert motion_energy(fills(0, 255, 0)) == [255.0, 255.0]
    with pytest.raises(errors.TooFewFrames):
        motion_energy(fills(1))


# --- frame extraction ---------------------------------------------------------------

def batch_of(frames):
    return MiniBatch("s", 0, 0, 1000, tuple(frames), Compression.NONE)


def test_extract_all_and_empty():
    b = batch_of(fills(1, 2, 3))
    assert [i for i, _ in extract_frames(b, "ALL")] == [0, 1, 2]
    assert extract_frames(batch_of([]), "ALL") == []


def test_extract_step():
    b = batch_of(fills(*range(10)))
    assert [i for i, _ in extract_frames(b, "STEP", step=2)] == [0, 2, 4, 6, 8]
    assert [i for i, _ in extract_frames(b, "STEP", step=4)] == [0, 4, 8]


def test_extract_key_uses_mad_oracle():
    # MAD between fill-0 and fill-255 frames is exactly 255 > tau=50
    frames = fills(*([0] * 5 + [255] * 5))
    b = batch_of(frames)
    assert [i for i, _ in extract_frames(b, "KEY", tau=50.0)] == [0, 5]


def test_extract_bad_policy():
    b = batch_of(fills(1))
    with pytest.raises(errors.BadPolicy):
        extract_frames(b, "SOMETIMES")
    with pytest.raises(errors.BadPolicy):
        extract_frames(b, "STEP", step=0)
    with pytest.raises(errors.BadPolicy):
        extract_frames(b, "KEY", tau=-1.0)


# --- histogram -----------------------------------------------------------------------

def test_histogram_constant_128():
    f = make_frame(4, 4, fill=128)
    assert histogram_feature(f, 8) == [0, 0, 0, 0, 1.0, 0, 0, 0]


def test_histogram_single_bin():
    f = make_frame(2, 2, fill=9)
    assert histogram_feature(f, 1) == [1.0]


def test_histogram_two_pixels():
    f = Frame(2, 1, PixelFormat.GRAY8, bytes([0, 255]))
    assert histogram_feature(f, 2) == [0.5, 0.5]


def test_histogram_empty_frame():
    f = Frame(0, 0, PixelFormat.GRAY8, b"")
    assert histogram_feature(f, 4) == [0.0] * 4


def test_histogram_bad_bins():
    f = make_frame(2, 2, fill=0)
    for bins in (0, 3, 257, -8):
        with pytest.raises(errors.BadBins):
            histogram_feature(f, bins)


def test_histogram_sums_to_one():
    rng = random.Random(5)
    for _ in range(20):
        f = make_frame(rng.randint(1, 16), rng.randint(1, 16), rng=rng)
        for bins in (1, 4, 32, 256):
            assert math.isclose(sum(histogram_feature(f, bins)), 1.0, abs_tol=1e-12)


# --- PCA ----------------------------------------------------------------------------

def test_pca_line_example():
    model = pca_fit([[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]], k=1)
    assert model.eigenvalues[0] == pytest.approx(2.0, abs=1e-10)
    s = 1 / math.sqrt(2)
    assert model.components[0] == pytest.approx([s, s], abs=1e-10)
    assert model.mean == pytest.approx([2.0, 2.0])


def test_pca_constant_column_zero_eigenvalue():
    X = [[1.0, 5.0], [2.0, 5.0], [3.0, 5.0]]
    model = pca_fit(X, k=2)
    assert model.eigenvalues[1] == pytest.approx(0.0, abs=1e-12)
    assert abs(model.components[1][1]) == pytest.approx(1.0, abs=1e-9)


def test_pca_matches_dense_eigensolver():
    rng = np.random.default_rng(42)
    for _ in range(60):
        n = int(rng.integers(3, 11))
        d = int(rng.integers(1, 6))
        X = rng.normal(size=(n, d)) * rng.uniform(0.1, 10)
        k = int(rng.integers(1, d + 1))
        model = pca_fit(X, k)
        vals, _ = eigh_oracle(X, k)
        # tolerance scales with the covariance since X is scaled up to 10x
        atol = 1e-8 * max(1.0, float(vals[0]))
        assert np.allclose(model.eigenvalues, vals, atol=atol)


def test_pca_components_match_on_separated_spectra():
    rng = np.random.default_rng(7)
    for _ in range(40):
        n, d = 8, int(rng.integers(2, 6))
        k = int(rng.integers(1, d + 1))
        X = separated_spectrum_matrix(rng, n, d)
        model = pca_fit(X, k)
        vals, comps = eigh_oracle(X, k)
        assert np.allclose(model.eigenvalues, vals, atol=1e-8)
        assert np.allclose(model.components, comps, atol=1e-8)


def test_pca_orthonormal_components():
    rng = np.random.default_rng(3)
    for _ in range(20):
        X = rng.normal(size=(9, 4))
        model = pca_fit(X, 4)
        G = model.components @ model.components.T
        assert np.allclose(G, np.eye(4), atol=1e-9)
        assert all(model.eigenvalues[i] >= model.eigenvalues[i + 1] - 1e-12
                   for i in range(3))
        assert np.all(model.eigenvalues >= -1e-12)


def test_pca_reconstruction_error_non_increasing():
    rng = np.random.default_rng(11)
    X = rng.normal(size=(10, 5))
    errors_by_k = []
    for k in range(1, 6):
        model = pca_fit(X, k)
        Z = pca_transform(model, X)
        Xhat = Z @ model.components + model.mean
        errors_by_k.append(float(np.linalg.norm(X - Xhat)))
    assert all(a >= b - 1e-9 for a, b in zip(errors_by_k, errors_by_k[1:]))
    assert errors_by_k[-1] == pytest.approx(0.0, abs=1e-8)


def test_pca_transform_of_mean_is_zero():
    X = [[1.0, 2.0], [3.0, 4.0], [5.0, 0.0]]
    model = pca_fit(X, 2)
    out = pca_transform(model, [model.mean.tolist()])
    assert np.allclose(out, 0.0, atol=1e-12)


def test_pca_transform_dim_mismatch():
    model = pca_fit([[1.0, 2.0], [3.0, 4.0]], 1)
    with pytest.raises(errors.DimMismatch):
        pca_transform(model, [[1.0, 2.0, 3.0]])


def test_pca_bad_k():
    X = [[1.0, 2.0], [3.0, 4.0]]
    for k in (0, 3):
        with pytest.raises(errors.BadK):
            pca_fit(X, k)


def test_pca_sign_convention():
    rng = np.random.default_rng(13)
    for _ in range(10):
        model = pca_fit(rng.normal(size=(6, 3)), 3)
        for comp in model.components:
            first = next(x for x in comp if abs(x) > 1e-12)
            assert first > 0


# --- variance selection -----------------------------------------------------------

def test_variance_select():
    X = [[0.0, 1.0, 5.0], [2.0, 1.0, 5.0]]  # variances: 2, 0, 0
    assert variance_select(X, 1.0) == [0]
    assert variance_select(X, -1.0) == [0, 1, 2]
    assert variance_select(X, 0.0) == [0]


def test_as_matrix_rejects_non_finite():
    with pytest.raises(ValueError):
        as_matrix([[1.0, float("nan")]])
