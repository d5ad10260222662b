"""Synthetic class-template image streams and IDX-format files."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, IdxParseError
from .nn import rng_from

_TEMPLATE_STREAM = 101
_TRAIN_NOISE_STREAM = 102
_TEST_NOISE_STREAM = 103

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class LabeledSet:
    """Images (n, C, H, W) in [0, 1] with integer labels (n,)."""

    images: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, indices) -> "LabeledSet":
        return LabeledSet(self.images[indices], self.labels[indices])

    def for_classes(self, classes) -> "LabeledSet":
        mask = np.isin(self.labels, list(classes))
        return LabeledSet(self.images[mask], self.labels[mask])

    @property
    def image_shape(self) -> tuple[int, ...]:
        return self.images.shape[1:]


@dataclass(frozen=True)
class SyntheticSpec:
    """Per-class template images plus gaussian pixel noise.

    Templates are smooth (a coarse uniform grid bilinearly upsampled to the
    image extent) and horizontally symmetric, so the crops, shifts, and
    flips used during training keep an example recognizable.
    """

    n_classes: int = 10
    train_per_class: int = 500
    test_per_class: int = 100
    channels: int = 1
    height: int = 12
    width: int = 12
    noise: float = 0.25
    template_grid: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.n_classes < 1 or self.train_per_class < 1 or self.test_per_class < 1:
            raise ConfigError("synthetic counts must be >= 1")
        if self.noise < 0:
            raise ConfigError(f"noise sigma must be >= 0, got {self.noise}")
        if min(self.channels, self.height, self.width) < 1:
            raise ConfigError("image extents must be >= 1")
        if self.template_grid < 1:
            raise ConfigError(f"template_grid must be >= 1, got {self.template_grid}")


def _bilinear_upsample(coarse: np.ndarray, height: int, width: int) -> np.ndarray:
    c, gh, gw = coarse.shape
    ys = np.linspace(0.0, gh - 1.0, height) if height > 1 else np.zeros(1)
    xs = np.linspace(0.0, gw - 1.0, width) if width > 1 else np.zeros(1)
    y0 = np.clip(np.floor(ys).astype(int), 0, gh - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, gw - 1)
    y1 = np.minimum(y0 + 1, gh - 1)
    x1 = np.minimum(x0 + 1, gw - 1)
    wy = (ys - y0)[None, :, None]
    wx = (xs - x0)[None, None, :]
    top = coarse[:, y0][:, :, x0] * (1 - wx) + coarse[:, y0][:, :, x1] * wx
    bottom = coarse[:, y1][:, :, x0] * (1 - wx) + coarse[:, y1][:, :, x1] * wx
    return top * (1 - wy) + bottom * wy


def class_template(spec: SyntheticSpec, cls: int) -> np.ndarray:
    rng = rng_from((spec.seed, _TEMPLATE_STREAM, cls))
    grid = min(spec.template_grid, spec.height, spec.width)
    coarse = rng.uniform(0.0, 1.0, size=(spec.channels, grid, grid))
    template = _bilinear_upsample(coarse, spec.height, spec.width)
    return 0.5 * (template + template[:, :, ::-1])


def _noisy_examples(template: np.ndarray, count: int, sigma: float, rng) -> np.ndarray:
    noise = rng.normal(0.0, sigma, size=(count, *template.shape)) if sigma > 0 else 0.0
    return np.clip(template[None] + noise, 0.0, 1.0)


def gen_synthetic(spec: SyntheticSpec) -> tuple[LabeledSet, LabeledSet]:
    """Deterministic train/test sets; test examples reuse the class
    templates with fresh noise."""
    train_images, train_labels, test_images, test_labels = [], [], [], []
    for cls in range(spec.n_classes):
        template = class_template(spec, cls)
        train_images.append(
            _noisy_examples(template, spec.train_per_class, spec.noise, rng_from((spec.seed, _TRAIN_NOISE_STREAM, cls)))
        )
        test_images.append(
            _noisy_examples(template, spec.test_per_class, spec.noise, rng_from((spec.seed, _TEST_NOISE_STREAM, cls)))
        )
        train_labels.append(np.full(spec.train_per_class, cls, dtype=np.int64))
        test_labels.append(np.full(spec.test_per_class, cls, dtype=np.int64))
    train = LabeledSet(np.concatenate(train_images), np.concatenate(train_labels))
    test = LabeledSet(np.concatenate(test_images), np.concatenate(test_labels))
    return train, test


def _read_u32(buf: bytes, offset: int, what: str) -> int:
    if offset + 4 > len(buf):
        raise IdxParseError(f"truncated file while reading {what}", offset)
    return struct.unpack_from(">I", buf, offset)[0]


def _load_idx_images(path) -> np.ndarray:
    with open(path, "rb") as fh:
        buf = fh.read()
    magic = _read_u32(buf, 0, "image magic")
    if magic != IDX_IMAGES_MAGIC:
        raise IdxParseError(f"expected image magic 0x{IDX_IMAGES_MAGIC:08x}, found 0x{magic:08x}", 0)
    count = _read_u32(buf, 4, "image count")
    rows = _read_u32(buf, 8, "row count")
    cols = _read_u32(buf, 12, "column count")
    expected = 16 + count * rows * cols
    if len(buf) < expected:
        raise IdxParseError(f"truncated image data: expected {expected} bytes, found {len(buf)}", len(buf))
    pixels = np.frombuffer(buf, dtype=np.uint8, count=count * rows * cols, offset=16)
    return pixels.reshape(count, 1, rows, cols).astype(np.float64) / 255.0


def _load_idx_labels(path) -> np.ndarray:
    with open(path, "rb") as fh:
        buf = fh.read()
    magic = _read_u32(buf, 0, "label magic")
    if magic != IDX_LABELS_MAGIC:
        raise IdxParseError(f"expected label magic 0x{IDX_LABELS_MAGIC:08x}, found 0x{magic:08x}", 0)
    count = _read_u32(buf, 4, "label count")
    expected = 8 + count
    if len(buf) < expected:
        raise IdxParseError(f"truncated label data: expected {expected} bytes, found {len(buf)}", len(buf))
    return np.frombuffer(buf, dtype=np.uint8, count=count, offset=8).astype(np.int64)


def load_idx(images_path, labels_path) -> LabeledSet:
    """Big-endian IDX pair: u8 images scaled to [0, 1], u8 labels."""
    images = _load_idx_images(images_path)
    labels = _load_idx_labels(labels_path)
    if len(images) != len(labels):
        raise IdxParseError(
            f"image count {len(images)} does not match label count {len(labels)}", 4
        )
    return LabeledSet(images, labels)


def write_idx(dataset: LabeledSet, images_path, labels_path) -> None:
    """Quantize images to u8 (round(v * 255)) and write the IDX pair."""
    images = dataset.images
    if images.ndim != 4 or images.shape[1] != 1:
        raise ConfigError(f"IDX files hold single-channel images, got shape {images.shape}")
    n, _, rows, cols = images.shape
    quantized = np.round(images[:, 0] * 255.0).astype(np.uint8)
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols))
        fh.write(quantized.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, n))
        fh.write(dataset.labels.astype(np.uint8).tobytes())
