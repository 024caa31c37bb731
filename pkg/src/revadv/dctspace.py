"""Orthonormal low-frequency 2D DCT directions and a seeded sampler.

Directions are spatial-domain images of unit impulses placed at low-frequency
DCT-II coefficients, one colour channel at a time.  The sampler draws those
coefficient positions uniformly without replacement, using a splitmix64
generator (documented in the README) so sequences are reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np
import scipy.fft

from .imagecore import FloatImage


class IndexOutOfRange(ValueError):
    pass


class Exhausted(Exception):
    """All low-frequency directions have been emitted."""


@dataclass(frozen=True)
class FrequencyIndex:
    channel: int  # 0..2
    u: int  # row frequency
    w: int  # column frequency


MASK64 = (1 << 64) - 1


def splitmix64(state: int):
    """Infinite stream of 64-bit values from the splitmix64 algorithm."""
    s = state & MASK64
    while True:
        s = (s + 0x9E3779B97F4A7C15) & MASK64
        z = s
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        yield z ^ (z >> 31)


def _shuffled(n: int, seed: int) -> list[int]:
    # Fisher-Yates driven by splitmix64; rejection sampling keeps draws uniform
    rng = splitmix64(seed)
    order = list(range(n))
    for i in range(n - 1, 0, -1):
        bound = i + 1
        limit = (MASK64 + 1) - ((MASK64 + 1) % bound)
        while True:
            r = next(rng)
            if r < limit:
                break
        j = r % bound
        order[i], order[j] = order[j], order[i]
    return order


def low_frequency_count(h: int, w: int, fraction: Fraction) -> tuple[int, int]:
    """(rows, cols) of the low-frequency coefficient block."""
    fu = int(h * Fraction(fraction))
    fw = int(w * Fraction(fraction))
    return fu, fw


class DirectionSampler:
    """Uniform without-replacement sampler over the low-frequency block."""

    def __init__(self, height: int, width: int, fraction, seed: int):
        fraction = Fraction(fraction)
        if not 0 < fraction <= 1:
            raise ValueError(f"frequency fraction must be in (0, 1], got {fraction}")
        self.height = height
        self.width = width
        self.fraction = fraction
        self.seed = seed
        fu, fw = low_frequency_count(height, width, fraction)
        if fu == 0 or fw == 0:
            raise ValueError("frequency fraction leaves an empty low-frequency block")
        self._fu, self._fw = fu, fw
        self._order = _shuffled(fu * fw * 3, seed)
        self._cursor = 0

    @property
    def total(self) -> int:
        return len(self._order)

    @property
    def remaining(self) -> int:
        return len(self._order) - self._cursor

    def next_direction(self) -> FrequencyIndex:
        if self._cursor >= len(self._order):
            raise Exhausted
        flat = self._order[self._cursor]
        self._cursor += 1
        channel, rest = divmod(flat, self._fu * self._fw)
        u, w = divmod(rest, self._fw)
        return FrequencyIndex(channel=channel, u=u, w=w)


def _cos_axis(n: int, k: int) -> np.ndarray:
    # orthonormal DCT-II basis function k on n points
    x = np.arange(n, dtype=np.float64)
    scale = np.sqrt(1.0 / n) if k == 0 else np.sqrt(2.0 / n)
    return scale * np.cos(np.pi * k * (2.0 * x + 1.0) / (2.0 * n))


def basis_direction(idx: FrequencyIndex, height: int, width: int) -> np.ndarray:
    """Spatial image of a unit impulse at DCT coefficient (u, w) of one channel.

    Returns a float (H, W, 3) array with unit L2 norm; values are
    unconstrained reals (this is a direction, not a FloatImage).
    """
    if not (0 <= idx.channel < 3 and 0 <= idx.u < height and 0 <= idx.w < width):
        raise IndexOutOfRange(str(idx))
    plane = np.outer(_cos_axis(height, idx.u), _cos_axis(width, idx.w))
    out = np.zeros((height, width, 3), dtype=np.float64)
    out[:, :, idx.channel] = plane
    return out


def dct2(plane: np.ndarray) -> np.ndarray:
    """Orthonormal 2D DCT-II (test oracle for basis_direction)."""
    return scipy.fft.dctn(np.asarray(plane, dtype=np.float64), norm="ortho")


def idct2(coeffs: np.ndarray) -> np.ndarray:
    return scipy.fft.idctn(np.asarray(coeffs, dtype=np.float64), norm="ortho")


def default_fraction(height: int, width: int) -> Fraction:
    """Denser block for small images, stronger low-pass for large ones."""
    return Fraction(1, 3) if min(height, width) < 64 else Fraction(1, 8)
