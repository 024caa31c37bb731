"""Shared corpus builders: real photo crops and seeded synthetic textures."""

import functools

import numpy as np
import pytest

from revadv import ColorImage

# Chroma offsets (r - g, b - g) that keep the whole image usable for the
# codec's reserved-region walk; verified by the usability scan in the codec
# tests.
SAFE_CHROMA = [(-20, -20), (0, -20), (20, -20), (-20, 20), (0, 20), (20, 20),
               (12, 20), (-12, -20), (20, 24), (-16, 22)]

SYNTH_SIZES = [32] * 6 + [48] * 6 + [64] * 6 + [96] * 6 + [128] * 6 \
    + [192] * 5 + [256] * 5


def synthetic_cover(size: int, seed: int) -> ColorImage:
    """Smooth seeded texture: low-frequency cosine field with fixed chroma."""
    rng = np.random.default_rng(seed)
    base = int(rng.integers(70, 190))
    # small images are capacity-tight (fixed header cost), so keep them very
    # smooth and restrict chroma to offsets with full reserved-walk usability
    small = size < 96
    chroma = SAFE_CHROMA[:6] if small else SAFE_CHROMA
    dr, db = chroma[int(rng.integers(len(chroma)))]
    amp = float(rng.uniform(3, 6) if small else rng.uniform(8, 22))
    terms = 1 if small else 2
    max_freq = 0.6 if small else 1.4
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / size
    plane = np.zeros((size, size))
    for _ in range(terms):
        fy, fx = rng.uniform(0.3, max_freq, 2)
        ph_y, ph_x = rng.uniform(0, 2 * np.pi, 2)
        plane += amp * np.cos(2 * np.pi * fy * yy + ph_y) \
            * np.cos(2 * np.pi * fx * xx + ph_x)
    g = np.clip(np.round(base + plane), 24, 231)
    r = np.clip(g + dr, 0, 255)
    b = np.clip(g + db, 0, 255)
    return ColorImage(np.stack([r, g, b], axis=-1).astype(np.uint8))


@functools.lru_cache(maxsize=1)
def _photo_covers_cached():
    data = pytest.importorskip("skimage.data")

    def img(arr):
        return ColorImage(np.ascontiguousarray(arr[:, :, :3]))

    return {
        "chelsea256": img(data.chelsea()[:256, 100:356]),
        "coffee256": img(data.coffee()[100:356, 200:456]),
        "rocket256": img(data.rocket()[100:356, 200:456]),
        "ihc256": img(data.immunohistochemistry()[100:356, 100:356]),
        "retina256": img(data.retina()[400:656, 400:656]),
        "hubble256": img(data.hubble_deep_field()[100:356, 100:356]),
        "chelsea128": img(data.chelsea()[:128, :128]),
        "coffee128": img(data.coffee()[150:278, 300:428]),
        "rocket128": img(data.rocket()[150:278, 300:428]),
        "hubble128": img(data.hubble_deep_field()[400:528, 400:528]),
        "ihc128": img(data.immunohistochemistry()[300:428, 100:228]),
        "retina128": img(data.retina()[500:628, 500:628]),
    }


def photo_covers() -> dict[str, ColorImage]:
    """Twelve real photographic crops from the scikit-image sample data."""
    return dict(_photo_covers_cached())


def full_corpus() -> dict[str, ColorImage]:
    """At least 50 covers: 12 photo crops plus 40 synthetics, 32 to 256 px."""
    corpus = dict(photo_covers())
    for i, size in enumerate(SYNTH_SIZES):
        corpus[f"synth{size}_{i:02d}"] = synthetic_cover(size, 1000 + i)
    return corpus


def payload_for(img: ColorImage, bpp: float = 0.05, seed: int = 7) -> list[int]:
    nbits = int(bpp * img.height * img.width)
    rng = np.random.default_rng(seed)
    return rng.integers(0, 2, size=nbits).tolist()
