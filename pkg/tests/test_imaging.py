"""Color conversion, patch extraction, and resizing."""

import numpy as np
import pytest
from skimage import color as skcolor

from favit import imaging
from favit.errors import DataError


class TestToFloat:
    def test_uint8_scaling(self):
        img = np.array([[[0, 128, 255]]], dtype=np.uint8)
        out = imaging.to_float(img)
        assert out.dtype == np.float64
        assert np.allclose(out, [[[0.0, 128 / 255, 1.0]]])

    def test_float_passthrough(self):
        img = np.full((2, 2, 3), 0.5)
        assert np.array_equal(imaging.to_float(img), img)

    def test_out_of_range_float_rejected(self):
        with pytest.raises(DataError):
            imaging.to_float(np.full((1, 1, 3), 1.5))

    def test_grayscale_replicated(self):
        img = np.full((4, 4), 0.25)
        out = imaging.ensure_rgb(img)
        assert out.shape == (4, 4, 3)
        assert np.all(out == 0.25)


class TestRgbToLab:
    def test_black(self):
        lab = imaging.rgb_to_lab(np.zeros((1, 1, 3)))
        assert np.allclose(lab, 0.0, atol=1e-6)

    def test_white_is_reference(self):
        lab = imaging.rgb_to_lab(np.ones((1, 1, 3)))
        assert lab[0, 0, 0] == pytest.approx(100.0, abs=0.01)
        assert abs(lab[0, 0, 1]) < 0.01 and abs(lab[0, 0, 2]) < 0.01

    def test_mid_gray_reference_value(self):
        lab = imaging.rgb_to_lab(np.full((1, 1, 3), 0.5))
        assert lab[0, 0, 0] == pytest.approx(53.39, abs=0.05)
        assert abs(lab[0, 0, 1]) < 0.01 and abs(lab[0, 0, 2]) < 0.01

    def test_matches_library_colorimetry(self):
        rng = np.random.default_rng(21)
        img = rng.uniform(0.0, 1.0, size=(8, 6, 3))
        ours = imaging.rgb_to_lab(img)
        ref = skcolor.rgb2lab(img)
        assert np.max(np.abs(ours - ref)) < 0.05

    def test_lightness_range_for_valid_srgb(self):
        rng = np.random.default_rng(4)
        img = rng.uniform(0.0, 1.0, size=(16, 16, 3))
        lab = imaging.rgb_to_lab(img)
        assert lab[..., 0].min() >= 0.0
        assert lab[..., 0].max() <= 100.0 + 1e-9


class TestPatchGrid:
    def test_canonical_counts(self):
        gh, gw = imaging.patch_grid(224, 224, 16)
        assert gh * gw == 196
        gh, gw = imaging.patch_grid(224, 224, 4)
        assert gh * gw == 3136

    def test_single_patch(self):
        gh, gw = imaging.patch_grid(8, 8, 8)
        assert (gh, gw) == (1, 1)
        assert imaging.extract_patches(np.full((8, 8, 3), 0.5), 8).shape == (1, 192)

    def test_non_divisible_rejected_naming_extents(self):
        with pytest.raises(DataError) as exc:
            imaging.patch_grid(30, 32, 4)
        msg = str(exc.value)
        assert "30" in msg and "32" in msg and "4" in msg


class TestExtractPatches:
    def test_vector_length(self):
        img = np.zeros((32, 32, 3))
        out = imaging.extract_patches(img, 16)
        assert out.shape == (4, 16 * 16 * 3)

    def test_single_red_pixel(self):
        img = np.zeros((1, 1, 3))
        img[0, 0, 0] = 1.0
        out = imaging.extract_patches(img, 1)
        assert np.array_equal(out, [[1.0, 0.0, 0.0]])

    def test_known_two_by_two_layout(self):
        # one 2x2 patch; pixels row-major, channels innermost
        img = np.zeros((2, 2, 3))
        img[0, 0] = [1, 2, 3]
        img[0, 1] = [4, 5, 6]
        img[1, 0] = [7, 8, 9]
        img[1, 1] = [10, 11, 12]
        out = imaging.extract_patches(img / 12.0, 2) * 12.0
        assert np.allclose(out[0], np.arange(1.0, 13.0))

    def test_matches_slicing_oracle(self):
        rng = np.random.default_rng(8)
        img = rng.uniform(size=(12, 16, 3))
        p = 4
        got = imaging.extract_patches(img, p)
        gh, gw = imaging.patch_grid(12, 16, p)
        for j in range(gh * gw):
            r, c = divmod(j, gw)
            block = img[r * p:(r + 1) * p, c * p:(c + 1) * p, :]
            assert np.array_equal(got[j], block.reshape(-1))

    def test_reassembly_is_bit_exact(self):
        rng = np.random.default_rng(2)
        img = rng.uniform(size=(8, 8, 3))
        p = 4
        flat = imaging.extract_patches(img, p)
        gh, gw = imaging.patch_grid(8, 8, p)
        rebuilt = np.zeros_like(img)
        for j in range(gh * gw):
            r, c = divmod(j, gw)
            rebuilt[r * p:(r + 1) * p, c * p:(c + 1) * p, :] = flat[j].reshape(p, p, 3)
        assert np.array_equal(rebuilt, img)
        assert flat.shape[0] * p * p == 8 * 8

    def test_embedding_is_linear(self):
        rng = np.random.default_rng(3)
        x = rng.uniform(size=(6, 4, 4, 3))
        e = rng.standard_normal((4 * 4 * 3, 7))
        fa = imaging.extract_patches(x[0] * 0.3 + x[1] * 0.7, 4) @ e
        fb = 0.3 * (imaging.extract_patches(x[0], 4) @ e) \
            + 0.7 * (imaging.extract_patches(x[1], 4) @ e)
        assert np.max(np.abs(fa - fb)) < 1e-9


class TestPatchCenters:
    def test_uniform_grid(self):
        centers = imaging.patch_centers(8, 8, 4)
        want = np.array([[1.5, 1.5], [5.5, 1.5], [1.5, 5.5], [5.5, 5.5]])
        assert np.allclose(centers, want)


class TestResizeNearest:
    def test_identity(self):
        img = np.random.default_rng(0).uniform(size=(5, 7, 3))
        assert np.array_equal(imaging.resize_nearest(img, 5, 7), img)

    def test_upscale_corners(self):
        img = np.zeros((2, 2, 3))
        img[0, 0] = 1.0
        img[1, 1] = 0.5
        out = imaging.resize_nearest(img, 4, 4)
        assert np.all(out[:2, :2] == 1.0)
        assert np.all(out[2:, 2:] == 0.5)

    def test_matches_index_map_oracle(self):
        rng = np.random.default_rng(14)
        img = rng.uniform(size=(10, 6, 3))
        h, w = 7, 9
        out = imaging.resize_nearest(img, h, w)
        for i in range(h):
            for j in range(w):
                si = min(int((i + 0.5) * 10 / h), 9)
                sj = min(int((j + 0.5) * 6 / w), 5)
                assert np.array_equal(out[i, j], img[si, sj])
