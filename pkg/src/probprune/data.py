"""Datasets: CIFAR-10 binary files and a synthetic image-blob generator.

The CIFAR-10 binary format is a flat stream of 3073-byte records: one label
byte (0-9) followed by 3072 pixel bytes (3 channels x 1024 pixels,
channel-major, rows in row-major order).  Training data lives in
data_batch_1.bin .. data_batch_5.bin and the test set in test_batch.bin;
record counts per file are free as long as each file is a whole number of
records.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataFormatError

RECORD_BYTES = 3073
IMAGE_DIMS = (3, 32, 32)
TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
TEST_FILE = "test_batch.bin"


@dataclass
class Dataset:
    """Normalized image splits: pixels scaled to [0,1] minus per-channel means."""

    x_train: np.ndarray
    y_train: np.ndarray
    x_val: np.ndarray
    y_val: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    channel_means: np.ndarray
    n_classes: int

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(self.x_train.shape[1:])


def decode_records(raw: bytes) -> tuple[np.ndarray, np.ndarray]:
    """Parse a binary record stream into (labels, pixels) uint8 arrays."""
    if len(raw) % RECORD_BYTES != 0:
        raise DataFormatError(
            f"stream of {len(raw)} bytes is not a multiple of the "
            f"{RECORD_BYTES}-byte record size"
        )
    records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, RECORD_BYTES)
    labels = records[:, 0].copy()
    if labels.size and labels.max() > 9:
        bad = int(labels.max())
        raise DataFormatError(f"label byte {bad} out of range 0-9")
    pixels = records[:, 1:].reshape(-1, *IMAGE_DIMS).copy()
    return labels, pixels


def encode_records(labels: np.ndarray, pixels: np.ndarray) -> bytes:
    """Inverse of decode_records: pack labels and uint8 pixels into record bytes."""
    labels = np.asarray(labels, dtype=np.uint8)
    pixels = np.asarray(pixels, dtype=np.uint8)
    if pixels.shape != (len(labels), *IMAGE_DIMS):
        raise DataFormatError(
            f"pixels shape {pixels.shape} does not match {(len(labels), *IMAGE_DIMS)}"
        )
    if labels.size and labels.max() > 9:
        raise DataFormatError("labels must be 0-9")
    records = np.empty((len(labels), RECORD_BYTES), dtype=np.uint8)
    records[:, 0] = labels
    records[:, 1:] = pixels.reshape(len(labels), -1)
    return records.tobytes()


def _normalize_splits(
    train_labels: np.ndarray,
    train_pixels: np.ndarray,
    test_labels: np.ndarray,
    test_pixels: np.ndarray,
    val_size: int,
    dtype,
    n_classes: int = 10,
) -> Dataset:
    n = len(train_labels)
    if not 0 < val_size < n:
        raise ConfigError(f"validation size {val_size} must be in (0, {n})")
    x_all = train_pixels.astype(dtype) / 255.0
    x_test = test_pixels.astype(dtype) / 255.0
    x_train, x_val = x_all[: n - val_size], x_all[n - val_size :]
    y_train = train_labels[: n - val_size].astype(np.int64)
    y_val = train_labels[n - val_size :].astype(np.int64)
    means = x_train.mean(axis=(0, 2, 3))
    shift = means.astype(dtype)[None, :, None, None]
    return Dataset(
        x_train=x_train - shift,
        y_train=y_train,
        x_val=x_val - shift,
        y_val=y_val,
        x_test=x_test - shift,
        y_test=test_labels.astype(np.int64),
        channel_means=means.astype(dtype),
        n_classes=n_classes,
    )


def load_cifar10(directory: str | os.PathLike, val_size: int = 5000, dtype=np.float64) -> Dataset:
    """Load the binary CIFAR-10 layout from `directory`.

    Pixels are scaled to [0,1] and shifted by per-channel means computed on
    the training portion (the last `val_size` training records form the
    validation split, in file order).
    """
    directory = Path(directory)
    train_parts = []
    for name in TRAIN_FILES:
        path = directory / name
        if not path.is_file():
            raise FileNotFoundError(f"missing CIFAR-10 batch file: {path}")
        train_parts.append(decode_records(path.read_bytes()))
    test_path = directory / TEST_FILE
    if not test_path.is_file():
        raise FileNotFoundError(f"missing CIFAR-10 test file: {test_path}")
    test_labels, test_pixels = decode_records(test_path.read_bytes())
    labels = np.concatenate([p[0] for p in train_parts])
    pixels = np.concatenate([p[1] for p in train_parts])
    return _normalize_splits(labels, pixels, test_labels, test_pixels, val_size, dtype)


def write_cifar10_dir(
    directory: str | os.PathLike,
    train_labels: np.ndarray,
    train_pixels: np.ndarray,
    test_labels: np.ndarray,
    test_pixels: np.ndarray,
) -> None:
    """Write label/pixel arrays as a standard CIFAR-10 binary directory."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    chunks = np.array_split(np.arange(len(train_labels)), len(TRAIN_FILES))
    for name, idx in zip(TRAIN_FILES, chunks):
        (directory / name).write_bytes(encode_records(train_labels[idx], train_pixels[idx]))
    (directory / TEST_FILE).write_bytes(encode_records(test_labels, test_pixels))


def synthetic_raw(
    seed: int,
    n_classes: int = 10,
    n_samples: int = 10000,
    dims: tuple[int, int, int] = IMAGE_DIMS,
    margin: float = 0.5,
) -> tuple[np.ndarray, np.ndarray]:
    """Class-conditional blob images as (labels, uint8 pixels).

    Each class owns a smooth random prototype; a sample mixes its class
    prototype (weight `margin`) with smooth plus white noise (weight
    1 - margin).  Larger margins give an easier, more separable problem.
    Deterministic for a given seed.
    """
    if n_samples < 10:
        raise ConfigError(f"need at least 10 samples for the 80/10/10 split, got {n_samples}")
    if n_classes < 2:
        raise ConfigError(f"need at least 2 classes, got {n_classes}")
    if not 0 < margin <= 1:
        raise ConfigError(f"margin must be in (0, 1], got {margin}")
    c, h, w = dims
    rng = np.random.default_rng(seed)

    def smooth_field(shape_n: int) -> np.ndarray:
        base_h, base_w = max(1, h // 4), max(1, w // 4)
        field = rng.standard_normal((shape_n, c, base_h, base_w))
        up = np.kron(field, np.ones((1, 1, -(-h // base_h), -(-w // base_w))))
        return up[:, :, :h, :w]

    protos = smooth_field(n_classes)
    protos = (protos - protos.mean(axis=(1, 2, 3), keepdims=True)) / protos.std(
        axis=(1, 2, 3), keepdims=True
    )
    labels = rng.permutation(np.arange(n_samples) % n_classes).astype(np.uint8)
    structured = smooth_field(n_samples)
    white = rng.standard_normal((n_samples, c, h, w))
    noise = 0.7 * structured + 0.7 * white
    z = margin * protos[labels] + (1.0 - margin) * noise
    pixels = np.clip(0.5 + 0.22 * z, 0.0, 1.0)
    return labels, np.round(pixels * 255.0).astype(np.uint8)


def synthetic_dataset(
    seed: int,
    n_classes: int = 10,
    n_samples: int = 10000,
    dims: tuple[int, int, int] = IMAGE_DIMS,
    margin: float = 0.5,
    dtype=np.float64,
) -> Dataset:
    """Synthetic dataset split 80/10/10 into train/val/test, normalized like CIFAR."""
    labels, pixels = synthetic_raw(seed, n_classes, n_samples, dims, margin)
    n_test = n_samples // 10
    n_val = n_samples // 10
    split = n_samples - n_test
    return _normalize_splits(
        labels[:split],
        pixels[:split],
        labels[split:],
        pixels[split:],
        n_val,
        dtype,
        n_classes=n_classes,
    )
