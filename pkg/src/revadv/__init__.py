"""Reversible adversarial examples: a query-based beam-search black-box
attack combined with grayscale-invariant reversible data hiding."""

from .imagecore import (ColorImage, FloatImage, GrayPlane, dequantize,
                        load_png, psnr, quantize, save_png, to_grayscale)
from .attack import AttackConfig, AttackOutcome, run_attack
from .rdhgi import capacity, embed, extract
from .pipeline import RunConfig, make_rae, run_corpus, verify

__all__ = [
    "ColorImage", "FloatImage", "GrayPlane", "AttackConfig", "AttackOutcome",
    "RunConfig", "dequantize", "load_png", "psnr", "quantize", "save_png",
    "to_grayscale", "run_attack", "capacity", "embed", "extract", "make_rae",
    "run_corpus", "verify",
]

__version__ = "0.1.0"
