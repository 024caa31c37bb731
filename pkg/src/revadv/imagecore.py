"""8-bit image containers, exact grayscale conversion, PSNR, and PNG I/O.

All grayscale arithmetic is integer fixed-point (scale 1000) so that the
conversion is bit-exact on every platform.  PSNR of identical images is
reported as ``math.inf``, never as a large float.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from PIL import Image

MIN_SIDE = 8

# BT.601 integer weights, scaled by 1000.  They sum to exactly 1000, so
# (c, c, c) always converts to c.
W_R, W_G, W_B = 299, 587, 114

PSNR_INF = math.inf


class DimensionMismatch(ValueError):
    pass


def _check_dims(h: int, w: int) -> None:
    if h < MIN_SIDE or w < MIN_SIDE:
        raise ValueError(f"image must be at least {MIN_SIDE}x{MIN_SIDE}, got {h}x{w}")


@dataclass(frozen=True)
class ColorImage:
    """8-bit RGB raster, shape (H, W, 3), dtype uint8."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3:
            raise ValueError(f"expected (H, W, 3) array, got shape {px.shape}")
        if px.dtype != np.uint8:
            if np.any(px < 0) or np.any(px > 255):
                raise ValueError("channel values must lie in [0, 255]")
            px = px.astype(np.uint8)
        _check_dims(px.shape[0], px.shape[1])
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def __eq__(self, other) -> bool:
        return isinstance(other, ColorImage) and np.array_equal(self.pixels, other.pixels)


@dataclass(frozen=True)
class GrayPlane:
    """8-bit single-channel plane, shape (H, W), dtype uint8."""

    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values)
        if vals.ndim != 2:
            raise ValueError(f"expected (H, W) array, got shape {vals.shape}")
        _check_dims(vals.shape[0], vals.shape[1])
        object.__setattr__(self, "values", vals.astype(np.uint8))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def __eq__(self, other) -> bool:
        return isinstance(other, GrayPlane) and np.array_equal(self.values, other.values)


@dataclass(frozen=True)
class FloatImage:
    """Float image in [0, 1], shape (H, W, 3).  Clamped at construction."""

    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 3 or vals.shape[2] != 3:
            raise ValueError(f"expected (H, W, 3) array, got shape {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("values must be finite")
        _check_dims(vals.shape[0], vals.shape[1])
        object.__setattr__(self, "values", np.clip(vals, 0.0, 1.0))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


def gray_value(r, g, b):
    """Round-half-up BT.601 gray of integer channel values (vectorized)."""
    s = W_R * np.asarray(r, dtype=np.int64) + W_G * np.asarray(g, dtype=np.int64) \
        + W_B * np.asarray(b, dtype=np.int64)
    return (s + 500) // 1000


def to_grayscale(img: ColorImage) -> GrayPlane:
    px = img.pixels.astype(np.int64)
    v = gray_value(px[:, :, 0], px[:, :, 1], px[:, :, 2])
    return GrayPlane(v.astype(np.uint8))


def psnr(a: ColorImage, b: ColorImage) -> float:
    if a.pixels.shape != b.pixels.shape:
        raise DimensionMismatch(f"{a.pixels.shape} vs {b.pixels.shape}")
    diff = a.pixels.astype(np.int64) - b.pixels.astype(np.int64)
    mse = np.mean(diff * diff)
    if mse == 0:
        return PSNR_INF
    return 10.0 * math.log10(255.0 * 255.0 / mse)


def quantize(x: FloatImage) -> ColorImage:
    # round-half-up so quantize(dequantize(img)) == img for every 8-bit image
    q = np.floor(255.0 * x.values + 0.5)
    return ColorImage(np.clip(q, 0, 255).astype(np.uint8))


def dequantize(img: ColorImage) -> FloatImage:
    return FloatImage(img.pixels.astype(np.float64) / 255.0)


def load_png(path) -> ColorImage:
    with Image.open(path) as im:
        if im.mode in ("I", "I;16", "I;16B", "I;16L"):
            raise ValueError(f"16-bit PNGs are not supported: {path}")
        if im.mode != "RGB":
            im = im.convert("RGB")  # strips alpha, expands palette/gray
        arr = np.asarray(im, dtype=np.uint8)
    return ColorImage(arr)


def save_png(img: ColorImage, path) -> None:
    Image.fromarray(img.pixels, mode="RGB").save(path, format="PNG")
