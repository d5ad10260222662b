"""Image augmentation: geometric distortion, magnitude-scaled random ops,
and the difficulty-ordered sample chain.

Images are (C, H, W) float64 arrays in [0, 1]; every transform clamps its
output back into that range and preserves shape. All randomness comes from
the generator passed in; the draw order per transform is part of the
contract (documented on each function) so streams can be replayed.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import ConfigError

MAX_MAGNITUDE = 30

KNOWN_OPS = (
    "invert",
    "brightness",
    "contrast",
    "translate-x",
    "translate-y",
    "cutout",
    "gaussian-noise",
)

# invert and translate are implemented but off by default: on 12x12
# template images they destroy the label more than they harden the view
# (invert maps one class template into a plausible other; translate at
# magnitude 15 shifts a third of the image away)
DEFAULT_OP_SET = (
    "brightness",
    "contrast",
    "cutout",
    "gaussian-noise",
)

# Per-op strength at magnitude 30 (linear in magnitude below that):
#   brightness/contrast  factor 1 +/- 0.9
#   translate            +/- 0.3 * extent pixels
#   cutout               square side 0.5 * min(H, W)
#   gaussian-noise       sigma 0.3
_BRIGHTNESS_MAX = 0.9
_CONTRAST_MAX = 0.9
_TRANSLATE_MAX = 0.3
_CUTOUT_MAX = 0.5
_NOISE_MAX = 0.3
_FILL = 0.5  # mid-gray fill for vacated translate pixels and cutout squares


@dataclass(frozen=True)
class AugPolicy:
    """Random-op policy: draw ``n_ops`` ops per call at strength ``magnitude``."""

    n_ops: int = 3
    magnitude: int = 15
    op_set: tuple[str, ...] = DEFAULT_OP_SET

    def __post_init__(self):
        if self.n_ops < 0:
            raise ConfigError(f"n_ops must be >= 0, got {self.n_ops}")
        if not 0 <= self.magnitude <= MAX_MAGNITUDE:
            raise ConfigError(f"magnitude must be in [0, {MAX_MAGNITUDE}], got {self.magnitude}")
        unknown = [op for op in self.op_set if op not in KNOWN_OPS]
        if unknown:
            raise ConfigError(f"unknown ops in op_set: {unknown}")
        if self.n_ops > 0 and not self.op_set:
            raise ConfigError("op_set must be non-empty when n_ops > 0")


@dataclass(frozen=True)
class ChainSpec:
    """Difficulty chain: one geometric stage, then repeated random-op stages."""

    n_stages: int = 3
    crop_pad: int = 4
    crop_prob: float = 0.5
    flip_prob: float = 0.5
    policy: AugPolicy = field(default_factory=AugPolicy)

    def __post_init__(self):
        if self.n_stages < 0:
            raise ConfigError(f"n_stages must be >= 0, got {self.n_stages}")
        if self.crop_pad < 0:
            raise ConfigError(f"crop_pad must be >= 0, got {self.crop_pad}")


def _clamp(img: np.ndarray) -> np.ndarray:
    return np.clip(img, 0.0, 1.0)


def _reflect_pad_crop(img: np.ndarray, pad: int, oy: int, ox: int) -> np.ndarray:
    h, w = img.shape[-2:]
    padded = np.pad(img, ((0, 0), (pad, pad), (pad, pad)), mode="reflect")
    return padded[:, oy : oy + h, ox : ox + w]


def geometric_distort(
    img: np.ndarray,
    rng: np.random.Generator,
    pad: int = 4,
    crop_prob: float = 0.5,
    flip_prob: float = 0.5,
) -> np.ndarray:
    """Random reflect-pad crop, then independent horizontal flip.

    Draw order: crop coin; if it fires, the (row, col) crop offsets; then
    the flip coin.
    """
    h, w = img.shape[-2:]
    if pad > 0 and min(h, w) < pad + 1:
        raise ConfigError(f"image {h}x{w} too small for reflect pad {pad}")
    out = img
    if rng.random() < crop_prob and pad > 0:
        oy = int(rng.integers(0, 2 * pad + 1))
        ox = int(rng.integers(0, 2 * pad + 1))
        out = _reflect_pad_crop(out, pad, oy, ox)
    if rng.random() < flip_prob:
        out = out[:, :, ::-1]
    return _clamp(np.ascontiguousarray(out))


def _translate(img: np.ndarray, shift: int, axis: int) -> np.ndarray:
    """Shift content along an image axis, filling vacated pixels with gray."""
    if shift == 0:
        return img.copy()
    out = np.full_like(img, _FILL)
    src = [slice(None)] * img.ndim
    dst = [slice(None)] * img.ndim
    if shift > 0:
        dst[axis] = slice(shift, None)
        src[axis] = slice(None, -shift)
    else:
        dst[axis] = slice(None, shift)
        src[axis] = slice(-shift, None)
    out[tuple(dst)] = img[tuple(src)]
    return out


def _apply_op(img: np.ndarray, op: str, level: float, rng: np.random.Generator) -> np.ndarray:
    """One random op at ``level`` in [0, 1] (magnitude / 30).

    Draw order per op: sign coin first where the op is signed, then any
    positional / noise draws.
    """
    h, w = img.shape[-2:]
    if op == "invert":
        return 1.0 - img
    if op == "brightness":
        sign = 1.0 if rng.random() < 0.5 else -1.0
        return _clamp(img * (1.0 + sign * _BRIGHTNESS_MAX * level))
    if op == "contrast":
        sign = 1.0 if rng.random() < 0.5 else -1.0
        mean = img.mean()
        return _clamp(mean + (img - mean) * (1.0 + sign * _CONTRAST_MAX * level))
    if op == "translate-x":
        sign = 1 if rng.random() < 0.5 else -1
        shift = sign * int(round(_TRANSLATE_MAX * w * level))
        return _translate(img, shift, axis=2)
    if op == "translate-y":
        sign = 1 if rng.random() < 0.5 else -1
        shift = sign * int(round(_TRANSLATE_MAX * h * level))
        return _translate(img, shift, axis=1)
    if op == "cutout":
        cy = int(rng.integers(0, h))
        cx = int(rng.integers(0, w))
        side = int(round(_CUTOUT_MAX * min(h, w) * level))
        if side == 0:
            return img.copy()
        y0 = max(0, cy - side // 2)
        x0 = max(0, cx - side // 2)
        out = img.copy()
        out[:, y0 : min(h, y0 + side), x0 : min(w, x0 + side)] = _FILL
        return out
    if op == "gaussian-noise":
        noise = rng.standard_normal(img.shape)
        return _clamp(img + _NOISE_MAX * level * noise)
    raise ConfigError(f"unknown op {op!r}")


def rand_augment(img: np.ndarray, policy: AugPolicy, rng: np.random.Generator) -> np.ndarray:
    """Apply ``n_ops`` ops drawn uniformly with replacement from the op set.

    Draw order: op index, then that op's own draws, repeated n_ops times.
    """
    if policy.n_ops > 0 and not policy.op_set:
        raise ConfigError("op_set must be non-empty when n_ops > 0")
    out = img
    level = policy.magnitude / MAX_MAGNITUDE
    for _ in range(policy.n_ops):
        op = policy.op_set[int(rng.integers(0, len(policy.op_set)))]
        out = _apply_op(out, op, level, rng)
    return _clamp(out)


def build_chain(img: np.ndarray, spec: ChainSpec, rng: np.random.Generator) -> list[np.ndarray]:
    """Difficulty chain [X0, X1, ..., Xn]: X0 is the raw image, X1 the
    geometric distortion of X0, and each later stage the random-op
    augmentation of its predecessor."""
    chain = [img]
    if spec.n_stages >= 1:
        chain.append(geometric_distort(img, rng, spec.crop_pad, spec.crop_prob, spec.flip_prob))
    for _ in range(2, spec.n_stages + 1):
        chain.append(rand_augment(chain[-1], spec.policy, rng))
    return chain


def _luma(img: np.ndarray) -> np.ndarray:
    if img.shape[0] == 3:
        r, g, b = img[0], img[1], img[2]
        return 0.299 * r + 0.587 * g + 0.114 * b
    return img.mean(axis=0)


def to_grayscale(img: np.ndarray) -> np.ndarray:
    """Replicate the luma across channels; identity on single-channel input."""
    if img.shape[0] == 1:
        return img.copy()
    return np.broadcast_to(_luma(img), img.shape).copy()


def _rotate_hue(img: np.ndarray, amount: float) -> np.ndarray:
    """Hue rotation via the YIQ color space; amount in [-0.5, 0.5] turns."""
    if img.shape[0] != 3:
        return img.copy()
    to_yiq = np.array(
        [[0.299, 0.587, 0.114], [0.5959, -0.2746, -0.3213], [0.2115, -0.5227, 0.3112]]
    )
    yiq = np.einsum("rc,chw->rhw", to_yiq, img)
    theta = 2.0 * np.pi * amount
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    i, q = yiq[1].copy(), yiq[2].copy()
    yiq[1] = cos_t * i - sin_t * q
    yiq[2] = sin_t * i + cos_t * q
    return _clamp(np.einsum("rc,chw->rhw", np.linalg.inv(to_yiq), yiq))


def color_jitter(
    img: np.ndarray,
    rng: np.random.Generator,
    brightness: float = 0.4,
    contrast: float = 0.4,
    saturation: float = 0.4,
    hue: float = 0.1,
) -> np.ndarray:
    """Brightness, contrast, saturation, then hue, each with a uniformly
    drawn factor. Draw order: the four factors, in that order, regardless
    of channel count (saturation/hue are no-ops on single-channel input)."""
    fb = rng.uniform(1.0 - brightness, 1.0 + brightness)
    fc = rng.uniform(1.0 - contrast, 1.0 + contrast)
    fs = rng.uniform(1.0 - saturation, 1.0 + saturation)
    fh = rng.uniform(-hue, hue)
    out = _clamp(img * fb)
    mean = _luma(out).mean()
    out = _clamp(mean + (out - mean) * fc)
    if img.shape[0] == 3:
        gray = _luma(out)
        out = _clamp(gray + (out - gray) * fs)
        out = _rotate_hue(out, fh)
    return out


def baseline_augment(img: np.ndarray, strategy: str, rng: np.random.Generator) -> np.ndarray:
    """Augmentation applied to classification-loss inputs.

    "partial" is the geometric distortion alone; "full" adds color jitter
    (p=0.8) and random grayscale (p=0.2). Draw order for "full": geometric
    draws, jitter coin, jitter factors (when the coin fires), grayscale coin.
    """
    if strategy not in ("partial", "full"):
        raise ConfigError(f"augmentation strategy must be 'partial' or 'full', got {strategy!r}")
    out = geometric_distort(img, rng)
    if strategy == "full":
        if rng.random() < 0.8:
            out = color_jitter(out, rng)
        if rng.random() < 0.2:
            out = to_grayscale(out)
    return out
