"""Synthetic generation, raster round trips, patching and splitting."""

import numpy as np
import pytest

from natseg.data import (
    SamplePair,
    SynthConfig,
    draw_line,
    extract_patches,
    generate_synthetic,
    load_split,
    load_tile_pair,
    save_image,
    save_mask,
    split,
    write_dataset,
)
from natseg.errors import ConfigError, DataError


def patch_grid_oracle(source: int, patch: int, stride: int) -> list[int]:
    """Independent grid arithmetic: full steps, then a border-aligned tail."""
    starts = []
    pos = 0
    while pos + patch <= source:
        starts.append(pos)
        pos += stride
    if starts[-1] + patch < source:
        starts.append(source - patch)
    return starts


class TestDrawLine:
    def test_width2_horizontal_line_covers_two_rows(self):
        size = 48
        image = np.full((1, size, size), 0.2, dtype=np.float32)
        mask = np.zeros((1, size, size), dtype=np.float32)
        draw_line(image, mask, (0.0, 10.5), (size - 1.0, 10.5), width=2.0)
        assert mask.sum() == 2 * size
        assert mask[0, 10].all() and mask[0, 11].all()

    def test_image_gets_antialiased_intensity(self):
        size = 16
        image = np.zeros((1, size, size), dtype=np.float32)
        mask = np.zeros((1, size, size), dtype=np.float32)
        draw_line(image, mask, (0.0, 0.0), (15.0, 15.0), width=2.0, intensity=0.9)
        assert image.max() == pytest.approx(0.9, abs=1e-6)
        # a diagonal leaves a partially covered fringe outside the hard mask
        fringe = (mask[0] == 0.0) & (image[0] > 0.0)
        assert fringe.any()
        assert image[0][fringe].max() < 0.9


class TestGenerateSynthetic:
    def test_noise_free_generation_is_bitwise_reproducible(self):
        cfg = SynthConfig(size=32, num_samples=3, noise_std=0.0, seed=5)
        a = generate_synthetic(cfg)
        b = generate_synthetic(cfg)
        for sa, sb in zip(a, b):
            assert sa.image.tobytes() == sb.image.tobytes()
            assert sa.mask.tobytes() == sb.mask.tobytes()

    def test_mask_fractions_within_bounds(self):
        cfg = SynthConfig(size=48, num_samples=100, seed=0)
        samples = generate_synthetic(cfg)
        assert len(samples) == 100
        for s in samples:
            fraction = s.mask.mean()
            assert 0.0 < fraction < 0.5

    def test_masks_are_binary_and_images_in_range(self):
        for s in generate_synthetic(SynthConfig(size=32, num_samples=5, seed=7)):
            assert set(np.unique(s.mask)) <= {0.0, 1.0}
            assert (s.image >= 0.0).all() and (s.image <= 1.0).all()
            assert s.image.dtype == np.float32

    def test_ids_are_stable_and_unique(self):
        samples = generate_synthetic(SynthConfig(size=32, num_samples=4, seed=1))
        ids = [s.id for s in samples]
        assert len(set(ids)) == 4
        assert ids == sorted(ids)


class TestTileIngestion:
    def test_round_trip_preserves_mask_bit_exactly(self, tmp_path):
        sample = generate_synthetic(SynthConfig(size=32, num_samples=1, seed=3))[0]
        img_path = tmp_path / "img.png"
        mask_path = tmp_path / "mask.png"
        save_image(img_path, sample.image)
        save_mask(mask_path, sample.mask)
        loaded = load_tile_pair(img_path, mask_path)
        np.testing.assert_array_equal(loaded.mask, sample.mask)

    def test_all_black_mask_loads_as_zeros(self, tmp_path):
        sample = generate_synthetic(SynthConfig(size=16, num_samples=1, seed=2))[0]
        img_path = tmp_path / "img.png"
        mask_path = tmp_path / "mask.png"
        save_image(img_path, sample.image)
        save_mask(mask_path, np.zeros((1, 16, 16)))
        loaded = load_tile_pair(img_path, mask_path)
        assert loaded.mask.sum() == 0.0

    def test_size_mismatch_names_both_sizes(self, tmp_path):
        a = generate_synthetic(SynthConfig(size=16, num_samples=1, seed=2))[0]
        b = generate_synthetic(SynthConfig(size=32, num_samples=1, seed=2))[0]
        img_path = tmp_path / "img.png"
        mask_path = tmp_path / "mask.png"
        save_image(img_path, a.image)
        save_mask(mask_path, b.mask)
        with pytest.raises(DataError, match="16.*32|32.*16"):
            load_tile_pair(img_path, mask_path)

    def test_undecodable_file_rejected(self, tmp_path):
        bogus = tmp_path / "bogus.png"
        bogus.write_bytes(b"not a png at all")
        with pytest.raises(DataError, match="decode"):
            load_tile_pair(bogus, bogus)

    def test_fixture_pair_with_known_positive_count(self, tmp_path):
        # fixture created here with a recorded ground-truth count
        size = 64
        image = np.full((3, size, size), 0.3, dtype=np.float32)
        mask = np.zeros((1, size, size), dtype=np.float32)
        draw_line(image, mask, (0.0, 20.5), (size - 1.0, 20.5), width=2.0)
        known_positive_count = 2 * size  # by the rasterization rule
        assert mask.sum() == known_positive_count
        save_image(tmp_path / "sat.png", image)
        save_mask(tmp_path / "map.png", mask)
        loaded = load_tile_pair(tmp_path / "sat.png", tmp_path / "map.png")
        assert loaded.mask.sum() == known_positive_count


class TestExtractPatches:
    def test_benchmark_grid_arithmetic(self):
        size, patch, stride = 1500, 384, 384
        image = np.zeros((3, size, size), dtype=np.float32)
        mask = np.zeros((1, size, size), dtype=np.float32)
        pair = SamplePair(image=image, mask=mask, id="tile")
        patches = extract_patches(pair, patch, stride)
        starts = patch_grid_oracle(size, patch, stride)
        assert starts == [0, 384, 768, 1116]
        assert len(patches) == 16
        offsets = {tuple(int(v) for v in p.id.split("+")[1:]) for p in patches}
        assert offsets == {(r, c) for r in starts for c in starts}

    def test_full_size_patch_is_identity(self):
        sample = generate_synthetic(SynthConfig(size=32, num_samples=1, seed=4))[0]
        patches = extract_patches(sample, 32, 32)
        assert len(patches) == 1
        np.testing.assert_array_equal(patches[0].image, sample.image)
        np.testing.assert_array_equal(patches[0].mask, sample.mask)

    def test_patches_remain_binary(self):
        sample = generate_synthetic(SynthConfig(size=48, num_samples=1, seed=6))[0]
        for p in extract_patches(sample, 16, 8):
            assert set(np.unique(p.mask)) <= {0.0, 1.0}

    def test_grid_covers_every_pixel(self):
        for source, patch, stride in ((20, 8, 8), (21, 8, 5), (16, 16, 16)):
            covered = np.zeros(source, dtype=bool)
            for start in patch_grid_oracle(source, patch, stride):
                covered[start : start + patch] = True
            assert covered.all()

    def test_oversized_patch_rejected(self):
        sample = generate_synthetic(SynthConfig(size=16, num_samples=1, seed=8))[0]
        with pytest.raises(ConfigError):
            extract_patches(sample, 32, 8)


class TestSplit:
    def test_all_to_train(self):
        samples = generate_synthetic(SynthConfig(size=16, num_samples=5, seed=9))
        train_s, val_s, test_s = split(samples, (1.0, 0.0, 0.0), seed=0)
        assert len(train_s) == 5 and not val_s and not test_s

    def test_same_seed_same_partition(self):
        samples = generate_synthetic(SynthConfig(size=16, num_samples=10, seed=10))
        a = split(samples, (0.6, 0.2, 0.2), seed=3)
        b = split(samples, (0.6, 0.2, 0.2), seed=3)
        assert [s.id for s in a[0]] == [s.id for s in b[0]]
        assert [s.id for s in a[2]] == [s.id for s in b[2]]

    def test_hundred_sources_at_80_10_10(self):
        samples = generate_synthetic(SynthConfig(size=16, num_samples=100, seed=11))
        train_s, val_s, test_s = split(samples, (0.8, 0.1, 0.1), seed=1)
        assert (len(train_s), len(val_s), len(test_s)) == (80, 10, 10)

    def test_disjoint_and_exhaustive(self):
        samples = generate_synthetic(SynthConfig(size=16, num_samples=13, seed=12))
        parts = split(samples, (0.5, 0.25, 0.25), seed=2)
        ids = [s.id for part in parts for s in part]
        assert len(ids) == 13
        assert len(set(ids)) == 13

    def test_fraction_sum_enforced(self):
        samples = generate_synthetic(SynthConfig(size=16, num_samples=4, seed=13))
        with pytest.raises(ConfigError):
            split(samples, (0.5, 0.2, 0.2), seed=0)


class TestDatasetLayout:
    def test_write_then_load_split_round_trip(self, tmp_path):
        samples = generate_synthetic(SynthConfig(size=32, num_samples=6, seed=14))
        train_s, val_s, test_s = split(samples, (0.5, 0.25, 0.25), seed=5)
        manifest = write_dataset(tmp_path, {"train": train_s, "val": val_s, "test": test_s})
        assert manifest.exists()
        lines = manifest.read_text().splitlines()
        assert lines[0] == "id,split,path_image,path_mask"
        assert len(lines) == 7
        loaded = load_split(tmp_path, "train")
        assert [s.id for s in loaded] == sorted(s.id for s in train_s)
        by_id = {s.id: s for s in train_s}
        for s in loaded:
            np.testing.assert_array_equal(s.mask, by_id[s.id].mask)

    def test_missing_directory_rejected(self, tmp_path):
        with pytest.raises(DataError):
            load_split(tmp_path, "train")

    def test_unknown_split_rejected(self, tmp_path):
        with pytest.raises(ConfigError):
            load_split(tmp_path, "holdout")
