"""Binary residual quantizer.

Each spatial site carries c sign bits; the reconstructed vector puts
+1/sqrt(c) where the bit is 1 and -1/sqrt(c) where it is 0, so every
site lies on the unit sphere and the implied codebook has 2**c entries.
A raw value of exactly 0 quantizes to bit 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .numerics import FeatureMap, RngStream, rng_uniform

MODES = ("argmax", "sample")


@dataclass(frozen=True)
class QuantizerConfig:
    channels: int = 16
    mode: str = "argmax"
    temperature: float = 1.0

    def __post_init__(self):
        if not 2 <= self.channels <= 64:
            raise ValueError("channels must be in [2, 64]")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")


@dataclass(frozen=True, eq=False)
class BitGrid:
    """h x w grid of uint64 words; bit k of a word is channel k's sign bit."""

    channels: int
    words: np.ndarray

    def __post_init__(self):
        w = np.ascontiguousarray(self.words, dtype=np.uint64)
        if w.ndim != 2:
            raise ValueError("BitGrid words must be 2-D (h, w)")
        if not 2 <= self.channels <= 64:
            raise ValueError("channels must be in [2, 64]")
        if self.channels < 64 and (w >> np.uint64(self.channels)).any():
            raise ValueError("words carry bits beyond the channel count")
        object.__setattr__(self, "words", w)

    @property
    def height(self) -> int:
        return self.words.shape[0]

    @property
    def width(self) -> int:
        return self.words.shape[1]


def _unit(channels: int) -> np.float32:
    return np.float32(1.0 / math.sqrt(channels))


def _pack_bits(bits: np.ndarray) -> np.ndarray:
    # bits: (c, h, w) bool -> (h, w) uint64 with bit k = channel k
    c = bits.shape[0]
    shifts = np.arange(c, dtype=np.uint64)[:, None, None]
    return (bits.astype(np.uint64) << shifts).sum(axis=0, dtype=np.uint64)


def _bits_and_map(bits: np.ndarray, channels: int) -> tuple[BitGrid, FeatureMap]:
    v = _unit(channels)
    values = np.where(bits, v, np.float32(-v)).astype(np.float32)
    return BitGrid(channels, _pack_bits(bits)), FeatureMap(values)


def quantize(raw: FeatureMap, cfg: QuantizerConfig) -> tuple[BitGrid, FeatureMap]:
    """Sign-quantize a raw map onto the +-1/sqrt(c) sphere.

    bit_k = 1 iff raw[k] >= 0; ties at zero count as positive.
    """
    if raw.channels != cfg.channels:
        raise ValueError(
            f"channel mismatch: map has {raw.channels}, quantizer expects {cfg.channels}"
        )
    return _bits_and_map(raw.data >= 0.0, cfg.channels)


def bits_to_map(grid: BitGrid) -> FeatureMap:
    """Lossless reconstruction of the quantized map from its bit grid."""
    shifts = np.arange(grid.channels, dtype=np.uint64)[:, None, None]
    bits = (grid.words[None, :, :] >> shifts) & np.uint64(1)
    v = _unit(grid.channels)
    return FeatureMap(np.where(bits.astype(bool), v, np.float32(-v)))


def logits_to_residual(
    logits: FeatureMap, cfg: QuantizerConfig, rng: RngStream
) -> tuple[BitGrid, FeatureMap, RngStream]:
    """Turn per-site logits into a quantized residual.

    argmax mode sets bit_k = 1 iff logit_k >= 0 and never consumes rng.
    sample mode draws bit_k ~ Bernoulli(sigmoid(logit_k / temperature)),
    consuming one uniform per channel-site in row-major (c, h, w) order.
    """
    if logits.channels != cfg.channels:
        raise ValueError(
            f"channel mismatch: logits have {logits.channels}, quantizer expects {cfg.channels}"
        )
    if cfg.mode == "argmax":
        bits = logits.data >= 0.0
    else:
        if cfg.temperature <= 0.0:
            raise ValueError("temperature must be positive in sample mode")
        z = logits.data.astype(np.float64) / cfg.temperature
        p = 1.0 / (1.0 + np.exp(-z))
        u, rng = rng_uniform(rng, logits.data.shape)
        bits = u < p
    grid, values = _bits_and_map(bits, cfg.channels)
    return grid, values, rng
