"""Dataset ingestion and the raw image container."""

import numpy as np
import pytest

from jetflow.data import (
    CIFAR_RECORD_BYTES,
    Dataset,
    SynthKind,
    load_cifar10,
    read_ppm,
    synth_dataset,
    write_ppm,
)
from jetflow.errors import ConfigError, DataFormatError


def _write_batch(path, records):
    """records: list of (label, planar_pixels[3072]) pairs."""
    rows = []
    for label, pixels in records:
        row = np.empty(CIFAR_RECORD_BYTES, dtype=np.uint8)
        row[0] = label
        row[1:] = pixels
        rows.append(row)
    np.stack(rows).tofile(path)


class TestCifarLoader:
    def test_record_layout(self, tmp_path):
        """One 3073-byte record: label, then 1024 R + 1024 G + 1024 B bytes."""
        planar = np.concatenate([
            np.full(1024, 10, np.uint8),
            np.full(1024, 20, np.uint8),
            np.full(1024, 30, np.uint8),
        ])
        for i in range(1, 6):
            _write_batch(tmp_path / f"data_batch_{i}.bin", [(3, planar)])
        dataset = load_cifar10(tmp_path, split="train")
        assert dataset.images.shape == (5, 32, 32, 3)
        np.testing.assert_array_equal(dataset.images[0, :, :, 0], 10)
        np.testing.assert_array_equal(dataset.images[0, :, :, 1], 20)
        np.testing.assert_array_equal(dataset.images[0, :, :, 2], 30)

    def test_constant_record(self, tmp_path):
        _write_batch(tmp_path / "test_batch.bin", [(1, np.full(3072, 7, np.uint8))])
        dataset = load_cifar10(tmp_path, split="validation")
        np.testing.assert_array_equal(dataset.images, 7)

    def test_wrong_size_names_file(self, tmp_path):
        for i in range(1, 6):
            (tmp_path / f"data_batch_{i}.bin").write_bytes(b"x" * 100)
        with pytest.raises(DataFormatError, match="data_batch_1"):
            load_cifar10(tmp_path, split="train")

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataFormatError, match="data_batch_1"):
            load_cifar10(tmp_path, split="train")

    def test_labels_discarded_pixels_untouched(self, tmp_path):
        rng = np.random.default_rng(0)
        pixels = rng.integers(0, 256, 3072).astype(np.uint8)
        for i in range(1, 6):
            _write_batch(tmp_path / f"data_batch_{i}.bin", [(9, pixels)])
        dataset = load_cifar10(tmp_path, split="train")
        np.testing.assert_array_equal(
            np.sort(dataset.images[0].reshape(-1)), np.sort(pixels)
        )


class TestSynthetic:
    def test_deterministic_in_seed(self):
        a = synth_dataset("gaussian_blobs", 4, 8, 8, 3, seed=5)
        b = synth_dataset(SynthKind.GAUSSIAN_BLOBS, 4, 8, 8, 3, seed=5)
        np.testing.assert_array_equal(a.images, b.images)

    def test_different_seeds_differ(self):
        a = synth_dataset("stripes", 4, 8, 8, 3, seed=1)
        b = synth_dataset("stripes", 4, 8, 8, 3, seed=2)
        assert not np.array_equal(a.images, b.images)

    def test_zero_amplitude_is_constant(self):
        data = synth_dataset("constant_plus_noise", 3, 4, 4, 1, seed=0,
                             constant=128, amplitude=0)
        np.testing.assert_array_equal(data.images, 128)

    def test_full_amplitude_is_uniform(self):
        """constant=0, amplitude=255 gives i.i.d. uniform bytes (8 bits each)."""
        data = synth_dataset("constant_plus_noise", 64, 8, 8, 3, seed=3)
        counts = np.bincount(data.images.reshape(-1), minlength=256)
        expected = data.images.size / 256.0
        assert counts.min() > 0
        assert abs(counts.mean() - expected) < 1e-9
        assert counts.std() < 3.0 * np.sqrt(expected)

    def test_blobs_use_full_range(self):
        data = synth_dataset("gaussian_blobs", 8, 16, 16, 3, seed=4)
        assert data.images.max() > 60
        assert data.images.min() == 0

    def test_stripes_have_two_levels(self):
        data = synth_dataset("stripes", 1, 8, 8, 1, seed=6)
        assert len(np.unique(data.images)) <= 2

    def test_bad_extents_rejected(self):
        with pytest.raises(ConfigError):
            synth_dataset("stripes", 0, 8, 8, 1, seed=0)
        with pytest.raises(ConfigError):
            synth_dataset("constant_plus_noise", 1, 8, 8, 1, seed=0, amplitude=300)

    def test_dataset_validates_dtype(self):
        with pytest.raises(DataFormatError):
            Dataset(images=np.zeros((1, 2, 2, 1), np.float32), split="train", provenance="x")


class TestRawImageContainer:
    def test_rgb_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        image = rng.integers(0, 256, (6, 5, 3)).astype(np.uint8)
        path = tmp_path / "img.ppm"
        write_ppm(path, image)
        np.testing.assert_array_equal(read_ppm(path), image)
        assert path.read_bytes().startswith(b"P6\n5 6\n255\n")

    def test_grayscale_round_trip(self, tmp_path):
        image = np.arange(12, dtype=np.uint8).reshape(3, 4, 1)
        path = tmp_path / "img.pgm"
        write_ppm(path, image)
        np.testing.assert_array_equal(read_ppm(path), image)

    def test_unsupported_channel_count(self, tmp_path):
        with pytest.raises(DataFormatError):
            write_ppm(tmp_path / "img.ppm", np.zeros((2, 2, 2), np.uint8))
