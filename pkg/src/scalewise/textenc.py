"""Deterministic hash-based text conditioning.

A stand-in for a pretrained text encoder: prompts map to embedding rows
through a 64-bit FNV-1a token hash that seeds a PRNG, plus a fixed
sinusoidal position code. Distinct prompts give distinct conditioning;
no semantics are implied.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import RngStream, rng_uniform

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1

DEFAULT_MAX_TOKENS = 64
MIN_TEXT_DIM = 8


def fnv1a64(text: str) -> int:
    """64-bit FNV-1a hash of the UTF-8 encoding of text."""
    h = FNV_OFFSET
    for byte in text.encode("utf-8"):
        h ^= byte
        h = (h * FNV_PRIME) & _MASK64
    return h


@dataclass(frozen=True, eq=False)
class TextEmbedding:
    """L x d_text float32 matrix; row 0 is always the start-of-sequence row."""

    data: np.ndarray

    def __post_init__(self):
        d = np.ascontiguousarray(self.data, dtype=np.float32)
        if d.ndim != 2 or d.shape[0] < 1:
            raise ValueError("TextEmbedding needs a 2-D matrix with at least one row")
        if not np.isfinite(d).all():
            raise ValueError("TextEmbedding entries must be finite")
        object.__setattr__(self, "data", d)

    @property
    def length(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]


def sinusoid_table(n: int, dim: int) -> np.ndarray:
    """Standard sin/cos position table of shape (n, dim), float32."""
    pos = np.arange(n, dtype=np.float64)[:, None]
    k = np.arange(dim, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * np.floor(k / 2.0) / dim)
    table = np.where(k % 2 == 0, np.sin(angle), np.cos(angle))
    return table.astype(np.float32)


def token_embedding(token: str, dim: int) -> np.ndarray:
    """Position-free embedding: hash-seeded uniform draws in [-1, 1)."""
    u, _ = rng_uniform(RngStream(fnv1a64(token)), (dim,))
    return (2.0 * u - 1.0).astype(np.float32)


def encode_prompt(
    prompt: str, d_text: int, max_tokens: int = DEFAULT_MAX_TOKENS
) -> TextEmbedding:
    """Embed a prompt as [SOS] plus one row per lowercase whitespace token.

    Each row is the token embedding plus the sinusoidal code for its row
    index; the SOS row uses the empty-string hash. Token lists longer
    than max_tokens - 1 are truncated. An empty prompt yields the SOS
    row alone.
    """
    if d_text < MIN_TEXT_DIM:
        raise ValueError(f"d_text must be >= {MIN_TEXT_DIM}")
    if max_tokens < 1:
        raise ValueError("max_tokens must be >= 1")
    tokens = prompt.lower().split()[: max_tokens - 1]
    rows = [token_embedding("", d_text)]
    rows.extend(token_embedding(tok, d_text) for tok in tokens)
    stacked = np.stack(rows) + sinusoid_table(len(rows), d_text)
    return TextEmbedding(stacked)


def build_gen_prompt(content: str, style: str) -> str:
    """Compose the generation prompt as "<content> in <style>"."""
    if not content or not style:
        raise ValueError("content and style prompts must be non-empty")
    return f"{content} in {style}"
