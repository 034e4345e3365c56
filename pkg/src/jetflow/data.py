"""Dataset ingestion: CIFAR-10 binary batches and synthetic generators.

Pixels are never rescaled or augmented on ingestion; everything stays
uint8 in [0, 255] until dequantization.  Labels in the CIFAR records are
discarded (the model is unconditional).
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataFormatError
from .seeding import stream

CIFAR_RECORD_BYTES = 3073  # 1 label byte + 32*32*3 channel-planar pixel bytes
CIFAR_TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
CIFAR_TEST_FILES = ("test_batch.bin",)


@dataclass
class Dataset:
    images: np.ndarray  # uint8, (N, H, W, C)
    split: str  # "train" or "validation"
    provenance: str

    def __post_init__(self):
        if self.images.dtype != np.uint8:
            raise DataFormatError(f"dataset pixels must be uint8, got {self.images.dtype}")
        if self.images.ndim != 4 or self.images.shape[0] == 0:
            raise DataFormatError(f"dataset must be non-empty (N, H, W, C), got {self.images.shape}")

    @property
    def count(self) -> int:
        return self.images.shape[0]

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return self.images.shape[1:]


def _parse_cifar_file(path: Path) -> np.ndarray:
    if not path.is_file():
        raise DataFormatError(f"missing CIFAR-10 batch file: {path}")
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size == 0 or raw.size % CIFAR_RECORD_BYTES:
        raise DataFormatError(
            f"{path}: size {raw.size} is not a multiple of the "
            f"{CIFAR_RECORD_BYTES}-byte record"
        )
    records = raw.reshape(-1, CIFAR_RECORD_BYTES)
    # Byte 0 is the label; the rest is channel-planar (1024 R, 1024 G, 1024 B).
    pixels = records[:, 1:].reshape(-1, 3, 32, 32)
    return np.ascontiguousarray(pixels.transpose(0, 2, 3, 1))


def load_cifar10(path, split: str = "train") -> Dataset:
    """Load the binary-format batches from a directory.

    The train split concatenates data_batch_1..5; validation reads
    test_batch.  Files may also carry no .bin suffix.
    """
    root = Path(path)
    if not root.is_dir():
        raise DataFormatError(f"CIFAR-10 path is not a directory: {root}")
    names = CIFAR_TRAIN_FILES if split == "train" else CIFAR_TEST_FILES
    parts = []
    for name in names:
        candidate = root / name
        if not candidate.is_file() and candidate.suffix == ".bin":
            candidate = root / candidate.stem
        parts.append(_parse_cifar_file(candidate))
    images = np.concatenate(parts, axis=0)
    return Dataset(images=images, split=split, provenance=f"cifar10:{root}")


class SynthKind(Enum):
    GAUSSIAN_BLOBS = "gaussian_blobs"
    STRIPES = "stripes"
    CONSTANT_PLUS_NOISE = "constant_plus_noise"


def synth_dataset(
    kind,
    n: int,
    height: int,
    width: int,
    channels: int,
    seed: int,
    *,
    constant: int = 0,
    amplitude: int = 255,
    max_blobs: int = 3,
) -> Dataset:
    """Deterministic synthetic images.

    constant_plus_noise: pixel = (constant + U{0..amplitude}) mod 256,
        i.i.d. per subpixel.  amplitude=0 gives constant images;
        constant=0 with amplitude=255 gives exactly uniform pixels, whose
        true entropy is 8 bits per subpixel.
    gaussian_blobs: per image, 1..max_blobs isotropic Gaussian bumps
        peak*exp(-((r-cy)^2+(c-cx)^2)/(2*sigma^2)) summed on a black
        background; centers uniform over the image, sigma uniform in
        [min(H,W)/8, min(H,W)/4], peak uniform in [64, 255]; channels
        share geometry and scale by a per-channel weight in [0.5, 1];
        clipped to [0, 255] and rounded.
    stripes: per image, axis-aligned square-wave stripes of period
        {2, 4, 8} with random phase between two random uint8 levels,
        identical across channels.
    """
    kind = SynthKind(kind) if not isinstance(kind, SynthKind) else kind
    if min(n, height, width, channels) < 1:
        raise ConfigError("synthetic dataset extents must be positive")
    if not 0 <= constant <= 255 or not 0 <= amplitude <= 255:
        raise ConfigError("constant and amplitude must lie in [0, 255]")
    rng = stream(seed, 7)

    if kind is SynthKind.CONSTANT_PLUS_NOISE:
        noise = rng.integers(0, amplitude + 1, size=(n, height, width, channels))
        images = ((constant + noise) % 256).astype(np.uint8)
    elif kind is SynthKind.GAUSSIAN_BLOBS:
        rows = np.arange(height)[:, None]
        cols = np.arange(width)[None, :]
        small = min(height, width)
        images = np.empty((n, height, width, channels), np.uint8)
        for i in range(n):
            intensity = np.zeros((height, width))
            for _ in range(rng.integers(1, max_blobs + 1)):
                cy, cx = rng.uniform(0, height), rng.uniform(0, width)
                sigma = rng.uniform(small / 8.0, small / 4.0)
                peak = rng.uniform(64.0, 255.0)
                dist2 = (rows - cy) ** 2 + (cols - cx) ** 2
                intensity += peak * np.exp(-dist2 / (2.0 * sigma * sigma))
            weights = rng.uniform(0.5, 1.0, size=channels)
            stacked = intensity[:, :, None] * weights[None, None, :]
            images[i] = np.rint(np.clip(stacked, 0.0, 255.0)).astype(np.uint8)
    else:  # stripes
        images = np.empty((n, height, width, channels), np.uint8)
        for i in range(n):
            axis = int(rng.integers(0, 2))
            period = int(rng.choice([2, 4, 8]))
            phase = int(rng.integers(0, period))
            lo, hi = np.sort(rng.integers(0, 256, size=2))
            coord = np.arange(height if axis == 0 else width)
            wave = ((coord + phase) % period) < (period // 2)
            levels = np.where(wave, int(hi), int(lo)).astype(np.uint8)
            plane = levels[:, None] if axis == 0 else levels[None, :]
            images[i] = np.broadcast_to(plane[:, :, None], (height, width, channels))
    return Dataset(
        images=images,
        split="train",
        provenance=f"synthetic:{kind.value}:n={n}:seed={seed}",
    )


def write_ppm(path, image: np.ndarray) -> None:
    """Write one uint8 image as binary PPM (3 channels) or PGM (1 channel)."""
    image = np.asarray(image)
    if image.dtype != np.uint8 or image.ndim != 3:
        raise DataFormatError(f"expected uint8 (H, W, C) image, got {image.dtype} {image.shape}")
    height, width, channels = image.shape
    if channels == 3:
        magic = b"P6"
    elif channels == 1:
        magic = b"P5"
    else:
        raise DataFormatError(f"raw image container supports 1 or 3 channels, got {channels}")
    with open(path, "wb") as fh:
        fh.write(magic + b"\n%d %d\n255\n" % (width, height))
        fh.write(image.tobytes())


def read_ppm(path) -> np.ndarray:
    """Inverse of `write_ppm` for the exact header layout it produces."""
    blob = Path(path).read_bytes()
    header, _, rest = blob.partition(b"\n")
    dims, _, rest = rest.partition(b"\n")
    maxval, _, pixels = rest.partition(b"\n")
    if header not in (b"P5", b"P6") or maxval != b"255":
        raise DataFormatError(f"{path}: not a raw image produced by this package")
    width, height = (int(v) for v in dims.split())
    channels = 3 if header == b"P6" else 1
    expected = width * height * channels
    if len(pixels) != expected:
        raise DataFormatError(f"{path}: expected {expected} pixel bytes, got {len(pixels)}")
    return np.frombuffer(pixels, dtype=np.uint8).reshape(height, width, channels)
