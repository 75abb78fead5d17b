"""Resize, augmentation chain, color jitter, lcn, and minmax."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hyperseg.augment import (
    AugmentConfig,
    _hsv_to_rgb,
    _rgb_to_hsv,
    augment,
    color_jitter,
    lcn,
    minmax,
    preprocess_test,
    resize_bilinear,
    resize_nearest,
)
from hyperseg.rng import Rng


class TestResize:
    def test_identity_size_is_exact(self, rand_image):
        np.testing.assert_array_equal(resize_bilinear(rand_image, 64, 64), rand_image)

    def test_constant_stays_constant(self):
        img = np.full((3, 10, 7), 0.3)
        np.testing.assert_allclose(resize_bilinear(img, 23, 31), 0.3, atol=1e-12)

    def test_2x2_to_4x4_hand_weights(self):
        img = np.array([[[1.0, 2.0], [3.0, 4.0]]])
        out = resize_bilinear(img, 4, 4)
        # half-pixel centers: source coords per output index = [0, .25, .75, 1]
        r0 = np.array([1.0, 1.25, 1.75, 2.0])
        r1 = np.array([3.0, 3.25, 3.75, 4.0])
        expected = np.stack([r0, 0.75 * r0 + 0.25 * r1, 0.25 * r0 + 0.75 * r1, r1])
        np.testing.assert_allclose(out[0], expected, atol=1e-12)

    def test_nearest_keeps_masks_binary(self, g):
        mask = (g.random(size=(1, 64, 64)) < 0.2).astype(float)
        up = resize_nearest(mask, 69, 69)
        assert set(np.unique(up)) <= {0.0, 1.0}
        np.testing.assert_array_equal(resize_nearest(mask, 64, 64), mask)

    def test_rejects_bad_target(self, rand_image):
        with pytest.raises(ValueError):
            resize_bilinear(rand_image, 0, 4)


class TestColorJitter:
    def test_strength_zero_is_bitwise_noop(self, rng, rand_image):
        out = color_jitter(rand_image, rng.stream("j"), 0.0)
        assert np.array_equal(out, rand_image)

    def test_output_clamped(self, rng, rand_image):
        out = color_jitter(rand_image, rng.stream("j2"), 0.5)
        assert out.min() >= 0.0 and out.max() <= 1.0
        assert not np.array_equal(out, rand_image)

    def test_hsv_roundtrip(self, g):
        img = g.uniform(0, 1, size=(3, 16, 16))
        back = _hsv_to_rgb(_rgb_to_hsv(img))
        np.testing.assert_allclose(back, img, atol=1e-12)

    def test_hue_full_turn_is_identity(self, g):
        img = g.uniform(0, 1, size=(3, 8, 8))
        hsv = _rgb_to_hsv(img)
        hsv[0] = (hsv[0] + 1.0) % 1.0
        np.testing.assert_allclose(_hsv_to_rgb(hsv), img, atol=1e-9)


class TestAugmentChain:
    def test_degenerate_config_equals_resize_chain(self, rng, rand_image):
        cfg = AugmentConfig(crop_prob=0.0, jitter_strong=0.0, jitter_weak=0.0, noise_enabled=False)
        mask = np.zeros((1, 64, 64))
        out, out_mask = augment(rand_image, mask, rng.stream("a"), cfg)
        expected = resize_bilinear(resize_bilinear(rand_image, 69, 69), 64, 64)
        np.testing.assert_array_equal(out, expected)
        assert not out_mask.any()

    def test_crop_mask_matches_window(self, rng, g):
        image = g.uniform(0, 1, size=(3, 64, 64))
        mask = (g.random(size=(1, 64, 64)) < 0.3).astype(float)
        cfg = AugmentConfig(crop_prob=1.0, jitter_strong=0.0, jitter_weak=0.0, noise_enabled=False)
        out, out_mask = augment(image, mask, rng.stream("crop"), cfg)
        # replay the same substream to recover the crop offsets
        replay = rng.stream("crop")
        assert replay.random() < 1.0
        oy = int(replay.integers(0, 6))
        ox = int(replay.integers(0, 6))
        resized = resize_nearest(mask, 69, 69)
        np.testing.assert_array_equal(out_mask, resized[:, oy : oy + 64, ox : ox + 64])
        assert out.shape == (3, 64, 64)

    def test_crop_offsets_uniform_chi_square(self, rng):
        sc = pytest.importorskip("scipy.stats")
        counts = np.zeros((6, 6))
        for i in range(1000):
            replay = rng.stream("offsets", i)
            replay.random()
            oy = int(replay.integers(0, 6))
            ox = int(replay.integers(0, 6))
            counts[oy, ox] += 1
        expected = 1000 / 36.0
        chi2 = float(((counts - expected) ** 2 / expected).sum())
        p = float(sc.chi2.sf(chi2, df=35))
        assert p > 0.01

    def test_noise_gates_about_half_the_pixels(self, rng, rand_image):
        mask = np.zeros((1, 64, 64))
        cfg_off = AugmentConfig(crop_prob=0.0, jitter_strong=0.0, jitter_weak=0.0, noise_enabled=False)
        cfg_on = AugmentConfig(crop_prob=0.0, jitter_strong=0.0, jitter_weak=0.0, noise_enabled=True)
        base, _ = augment(rand_image, mask, rng.stream("n"), cfg_off)
        noisy, noisy_mask = augment(rand_image, mask, rng.stream("n"), cfg_on)
        changed = (noisy != base).any(axis=0)
        assert 0.42 <= changed.mean() <= 0.58
        assert not noisy_mask.any()  # masks never noised

    def test_masks_never_photometrically_touched(self, rng, g):
        image = g.uniform(0, 1, size=(3, 64, 64))
        mask = (g.random(size=(1, 64, 64)) < 0.3).astype(float)
        out, out_mask = augment(image, mask, rng.stream("m"), AugmentConfig())
        assert set(np.unique(out_mask)) <= {0.0, 1.0}


class TestNormalization:
    def test_lcn_constant_to_zeros(self):
        np.testing.assert_array_equal(lcn(np.full((3, 8, 8), 0.7)), np.zeros((3, 8, 8)))

    def test_lcn_zero_mean_unit_mad(self, rand_image):
        out = lcn(rand_image)
        assert abs(out.mean()) < 1e-9
        assert abs(np.abs(out - out.mean()).mean() - 1.0) < 1e-9

    def test_lcn_idempotent_up_to_tolerance(self, rand_image):
        once = lcn(rand_image)
        np.testing.assert_allclose(lcn(once), once, atol=1e-9)

    def test_minmax_simple(self):
        np.testing.assert_allclose(minmax(np.array([-1.0, 3.0])), [0.0, 1.0])

    def test_minmax_constant_to_half(self):
        np.testing.assert_array_equal(minmax(np.full((3, 4, 4), 2.0)), np.full((3, 4, 4), 0.5))

    def test_minmax_bounds(self, rand_image):
        out = minmax(rand_image * 7.0 - 2.0)
        assert out.min() == 0.0 and out.max() == 1.0

    def test_preprocess_test_is_resize_lcn_minmax_only(self, rand_image):
        out = preprocess_test(rand_image, 64)
        np.testing.assert_array_equal(out, minmax(lcn(rand_image)))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_minmax_lcn_properties(seed):
    g = np.random.default_rng(seed)
    img = g.uniform(-5, 5, size=(3, 6, 6))
    mm = minmax(img)
    assert mm.min() >= 0.0 and mm.max() <= 1.0
    if np.ptp(img) > 0:
        assert mm.min() == 0.0 and mm.max() == 1.0
    out = lcn(img)
    assert abs(out.mean()) < 1e-9
