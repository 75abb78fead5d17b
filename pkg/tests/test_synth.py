"""Synthetic categories, confetti and stamp anomalies, dataset writer."""

import hashlib
import json
import math
from pathlib import Path

import numpy as np
import pytest

from hyperseg.rng import Rng
from hyperseg.synth import (
    CategorySpec,
    DatasetCounts,
    confetti_apply,
    default_categories,
    ellipse_mask,
    gen_normal_image,
    load_category,
    load_manifest,
    stamp_test_anomaly,
    stroke_mask,
    write_dataset,
)


class TestNormalImages:
    def test_bit_identical_regeneration(self, rng):
        spec = default_categories()[3]
        a = gen_normal_image(spec, rng, 5)
        b = gen_normal_image(spec, rng, 5)
        assert np.array_equal(a, b)

    def test_different_indices_differ(self, rng):
        spec = default_categories()[0]
        assert not np.array_equal(gen_normal_image(spec, rng, 0), gen_normal_image(spec, rng, 1))

    def test_values_in_unit_interval(self, rng):
        for spec in default_categories():
            img = gen_normal_image(spec, rng, 0)
            assert img.shape == (3, 64, 64)
            assert img.min() >= 0.0 and img.max() <= 1.0

    def test_noiseless_stripes_periodic(self, rng):
        spec = CategorySpec("s", 0, "stripes", period=8.0, angle=0.0, noise_amp=0.0)
        img = gen_normal_image(spec, rng, 0)
        np.testing.assert_allclose(img[:, :, :-8], img[:, :, 8:], atol=1e-9)
        # constant along the stripe direction
        np.testing.assert_allclose(img, img[:, :1, :], atol=1e-12)

    def test_category_means_are_separated(self, rng):
        # regression fixture: minimum pairwise gap of per-category mean pixel
        # values over a 100-image sample, frozen from the generator defaults
        means = []
        for spec in default_categories():
            means.append(np.mean([gen_normal_image(spec, rng, i).mean() for i in range(100)]))
        means = np.array(means)
        gaps = np.abs(means[:, None] - means[None, :])
        min_gap = gaps[~np.eye(10, dtype=bool)].min()
        assert min_gap > 0.01


class TestConfetti:
    def test_zero_count_is_identity(self, rng, rand_image):
        out, mask = confetti_apply(rand_image, rng.stream("c"), count_range=(0, 0))
        assert np.array_equal(out, rand_image)
        assert not mask.any()

    def test_unclipped_square_mask_is_side_squared(self, rng, rand_image):
        seen_unclipped = 0
        for i in range(50):
            _, mask = confetti_apply(rand_image, rng.stream("c", i), count_range=(1, 1), size_range=(6, 6))
            ys, xs = np.nonzero(mask[0])
            touches_border = ys.min() == 0 or xs.min() == 0 or ys.max() == 63 or xs.max() == 63
            if not touches_border:
                assert mask.sum() == 36
                seen_unclipped += 1
        assert seen_unclipped > 20

    def test_mask_equals_pixel_diff(self, rng, rand_image):
        for i in range(100):
            out, mask = confetti_apply(rand_image, rng.stream("d", i))
            changed = (out != rand_image).any(axis=0)
            np.testing.assert_array_equal(changed, mask[0].astype(bool))
            assert mask.sum() > 0

    def test_mask_binary_and_borders_hard(self, rng, rand_image):
        out, mask = confetti_apply(rand_image, rng.stream("e"))
        assert set(np.unique(mask)) <= {0.0, 1.0}
        # inside a square all three channels are constant (hard paste, no blend)
        ys, xs = np.nonzero(mask[0])
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_size_range_validation(self, rng, rand_image):
        with pytest.raises(ValueError, match="size_range"):
            confetti_apply(rand_image, rng.stream("f"), size_range=(2, 100))


class TestStamps:
    def test_zero_count_is_identity(self, rng, rand_image):
        out, mask = stamp_test_anomaly(rand_image, rng.stream("s"), count_range=(0, 0))
        assert np.array_equal(out, rand_image)
        assert not mask.any()

    def test_ellipse_area_close_to_analytic(self, rng):
        g = rng.stream("areas")
        for _ in range(50):
            a = float(g.uniform(4.0, 10.0))
            b = float(g.uniform(4.0, 10.0))
            m = ellipse_mask(64, 31.5, 31.5, a, b)
            assert 0.9 * math.pi * a * b <= m.sum() <= 1.1 * math.pi * a * b

    def test_no_mask_is_a_filled_axis_aligned_rectangle(self, rng, rand_image):
        for i in range(200):
            _, mask = stamp_test_anomaly(rand_image, rng.stream("rect", i))
            m = mask[0]
            assert m.sum() > 0
            ys, xs = np.nonzero(m)
            bbox_area = (ys.max() - ys.min() + 1) * (xs.max() - xs.min() + 1)
            assert m.sum() < bbox_area, f"draw {i} produced a filled rectangle"

    def test_stroke_mask_is_capsule(self):
        m = stroke_mask(32, (10.0, 5.0), (20.0, 25.0), 4.0)
        assert m.sum() > 0
        assert set(np.unique(m)) <= {0.0, 1.0}

    def test_kind_override(self, rng, rand_image):
        out, mask = stamp_test_anomaly(rand_image, rng.stream("k"), kind="ellipse")
        assert mask.sum() > 0
        with pytest.raises(ValueError, match="kind"):
            stamp_test_anomaly(rand_image, rng.stream("k"), kind="squiggle")

    def test_values_stay_in_unit_interval(self, rng, rand_image):
        for i in range(20):
            out, _ = stamp_test_anomaly(rand_image, rng.stream("u", i))
            assert out.min() >= 0.0 and out.max() <= 1.0


def _tree_digest(root: Path) -> str:
    h = hashlib.sha256()
    for path in sorted(root.rglob("*")):
        if path.is_file():
            h.update(str(path.relative_to(root)).encode())
            h.update(path.read_bytes())
    return h.hexdigest()


class TestWriteDataset:
    def test_manifest_counts(self, tmp_path):
        counts = DatasetCounts(train=4, test_normal=2, test_anomalous=2)
        manifest = write_dataset(tmp_path / "d", default_categories()[:2], Rng(3), counts)
        assert len(manifest["categories"]) == 2
        for cat in manifest["categories"]:
            assert len(cat["files"]) == 8

    def test_anomalous_masks_nonempty_and_typed(self, tmp_path):
        counts = DatasetCounts(train=2, test_normal=1, test_anomalous=4)
        write_dataset(tmp_path / "d", default_categories()[:1], Rng(3), counts)
        manifest = load_manifest(tmp_path / "d")
        data = load_category(tmp_path / "d", manifest, "stripes0")
        kinds = [k for k in data.test_kinds if k is not None]
        assert sorted(set(kinds)) == ["ellipse", "stroke"]
        for i, kind in enumerate(data.test_kinds):
            if kind is not None:
                assert data.test_masks[i].sum() > 0

    def test_rerun_is_byte_identical(self, tmp_path):
        counts = DatasetCounts(train=3, test_normal=2, test_anomalous=2)
        write_dataset(tmp_path / "a", default_categories()[:2], Rng(11), counts)
        write_dataset(tmp_path / "b", default_categories()[:2], Rng(11), counts)
        assert _tree_digest(tmp_path / "a") == _tree_digest(tmp_path / "b")

    def test_nonempty_dir_rejected(self, tmp_path):
        target = tmp_path / "d"
        target.mkdir()
        (target / "junk.txt").write_text("x")
        with pytest.raises(ValueError, match="non-empty"):
            write_dataset(target, default_categories()[:1], Rng(0), DatasetCounts(1, 1, 1))

    def test_manifest_stable_key_order(self, tmp_path):
        write_dataset(tmp_path / "d", default_categories()[:1], Rng(0), DatasetCounts(1, 1, 1))
        text = (tmp_path / "d" / "manifest.json").read_text()
        parsed = json.loads(text)
        assert text == json.dumps(parsed, indent=2, sort_keys=True) + "\n"

    def test_roundtrip_matches_quantized_generation(self, tmp_path, rng):
        counts = DatasetCounts(train=2, test_normal=1, test_anomalous=1)
        spec = default_categories()[0]
        write_dataset(tmp_path / "d", [spec], Rng(5), counts)
        data = load_category(tmp_path / "d", load_manifest(tmp_path / "d"), "stripes0")
        regenerated = gen_normal_image(spec, Rng(5), 0)
        quantized = np.rint(regenerated * 255.0) / 255.0
        np.testing.assert_allclose(data.train_images[0], quantized, atol=1e-12)
