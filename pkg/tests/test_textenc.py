import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from scalewise.textenc import (
    DEFAULT_MAX_TOKENS,
    TextEmbedding,
    build_gen_prompt,
    encode_prompt,
    fnv1a64,
    sinusoid_table,
    token_embedding,
)

MASK = (1 << 64) - 1


def reference_token_row(token: str, dim: int, position: int) -> np.ndarray:
    """Independent recomputation: FNV-1a seed, splitmix64 draws, sin/cos code."""
    h = 0xCBF29CE484222325
    for b in token.encode("utf-8"):
        h = ((h ^ b) * 0x100000001B3) & MASK
    draws = []
    state = h
    for _ in range(dim):
        state = (state + 0x9E3779B97F4A7C15) & MASK
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
        z ^= z >> 31
        draws.append((z >> 11) * 2.0**-53)
    base = (2.0 * np.array(draws) - 1.0).astype(np.float32)
    pos = np.empty(dim, dtype=np.float64)
    for k in range(dim):
        angle = position / 10000.0 ** (2.0 * (k // 2) / dim)
        pos[k] = math.sin(angle) if k % 2 == 0 else math.cos(angle)
    return base + pos.astype(np.float32)


def test_fnv1a_known_values():
    # standard FNV-1a 64-bit test vectors
    assert fnv1a64("") == 0xCBF29CE484222325
    assert fnv1a64("a") == 0xAF63DC4C8601EC8C


def test_encode_deterministic():
    a = encode_prompt("A photo of a donut", 16)
    b = encode_prompt("A photo of a donut", 16)
    assert np.array_equal(a.data, b.data)


def test_empty_prompt_is_sos_only():
    emb = encode_prompt("", 16)
    assert emb.length == 1
    assert np.array_equal(emb.data[0], token_embedding("", 16) + sinusoid_table(1, 16)[0])


def test_differing_token_changes_only_its_row():
    red = encode_prompt("red truck", 16)
    green = encode_prompt("green truck", 16)
    assert red.length == green.length == 3
    assert np.array_equal(red.data[0], green.data[0])
    assert np.array_equal(red.data[2], green.data[2])
    assert not np.array_equal(red.data[1], green.data[1])


def test_rows_match_independent_reference():
    emb = encode_prompt("Red Truck", 16)
    assert np.array_equal(emb.data[0], reference_token_row("", 16, 0))
    assert np.array_equal(emb.data[1], reference_token_row("red", 16, 1))
    assert np.array_equal(emb.data[2], reference_token_row("truck", 16, 2))


def test_case_folding_and_whitespace():
    a = encode_prompt("A  CAT", 16)
    b = encode_prompt("a cat", 16)
    assert np.array_equal(a.data, b.data)


def test_truncation_to_max_tokens():
    prompt = " ".join(f"tok{i}" for i in range(100))
    emb = encode_prompt(prompt, 16)
    assert emb.length == DEFAULT_MAX_TOKENS


def test_small_dim_rejected():
    with pytest.raises(ValueError):
        encode_prompt("hello", 4)


@given(st.sampled_from(["red cat", "blue dog", "one two", "x y"]))
def test_token_order_matters(prompt):
    tokens = prompt.split()
    swapped = " ".join(reversed(tokens))
    a = encode_prompt(prompt, 16)
    b = encode_prompt(swapped, 16)
    assert not np.array_equal(a.data, b.data)


def test_embedding_validation():
    with pytest.raises(ValueError):
        TextEmbedding(np.zeros((0, 8), dtype=np.float32))
    with pytest.raises(ValueError):
        TextEmbedding(np.full((1, 8), np.inf, dtype=np.float32))


class TestBuildGenPrompt:
    def test_template(self):
        assert (
            build_gen_prompt("A cat", "watercolor painting style")
            == "A cat in watercolor painting style"
        )

    def test_minimal(self):
        assert build_gen_prompt("x", "y") == "x in y"

    def test_longer(self):
        assert (
            build_gen_prompt("A photo of a donut", "oil painting")
            == "A photo of a donut in oil painting"
        )

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            build_gen_prompt("", "style")
        with pytest.raises(ValueError):
            build_gen_prompt("content", "")
