import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from scalewise.numerics import FeatureMap, RngStream
from scalewise.quantizer import (
    BitGrid,
    QuantizerConfig,
    bits_to_map,
    logits_to_residual,
    quantize,
)


def test_all_positive_sites():
    raw = FeatureMap(np.full((4, 2, 2), 0.7, dtype=np.float32))
    grid, qmap = quantize(raw, QuantizerConfig(channels=4))
    assert np.all(qmap.data == np.float32(0.5))
    assert np.all(grid.words == np.uint64(0b1111))


def test_idempotent_on_own_output():
    rng = np.random.default_rng(0)
    raw = FeatureMap(rng.standard_normal((8, 3, 3)).astype(np.float32))
    cfg = QuantizerConfig(channels=8)
    _, once = quantize(raw, cfg)
    _, twice = quantize(once, cfg)
    assert np.array_equal(once.data, twice.data)


def test_hand_computed_site():
    # sign rule per channel, zero counts as positive
    raw = FeatureMap(
        np.array([-0.3, 0.0, 2.1, -7.0], dtype=np.float32).reshape(4, 1, 1)
    )
    grid, qmap = quantize(raw, QuantizerConfig(channels=4))
    assert grid.words[0, 0] == np.uint64(0b0110)
    assert np.array_equal(
        qmap.data[:, 0, 0], np.array([-0.5, 0.5, 0.5, -0.5], dtype=np.float32)
    )


def test_channel_mismatch_rejected():
    raw = FeatureMap(np.zeros((3, 1, 1), dtype=np.float32))
    with pytest.raises(ValueError):
        quantize(raw, QuantizerConfig(channels=4))


@given(
    hnp.arrays(
        np.float32,
        st.tuples(st.just(5), st.integers(1, 3), st.integers(1, 3)),
        elements=st.floats(-50, 50, width=32),
    )
)
def test_unit_norm_property(data):
    _, qmap = quantize(FeatureMap(data), QuantizerConfig(channels=5))
    norms = np.sqrt((qmap.data.astype(np.float64) ** 2).sum(axis=0))
    assert np.all(np.abs(norms - 1.0) <= 1e-6)


def test_bitgrid_roundtrip_lossless():
    rng = np.random.default_rng(1)
    raw = FeatureMap(rng.standard_normal((6, 4, 5)).astype(np.float32))
    grid, qmap = quantize(raw, QuantizerConfig(channels=6))
    assert np.array_equal(bits_to_map(grid).data, qmap.data)


def test_codebook_enumeration_c3():
    # exhaustive: every 3-bit word maps to a distinct unit vector
    words = np.arange(8, dtype=np.uint64).reshape(1, 8)
    vectors = bits_to_map(BitGrid(3, words)).data[:, 0, :].T
    assert vectors.shape == (8, 3)
    assert len({tuple(v) for v in vectors}) == 8
    v = 1.0 / math.sqrt(3.0)
    assert np.allclose(np.abs(vectors), v, atol=1e-7)


def test_bitgrid_rejects_stray_bits():
    with pytest.raises(ValueError):
        BitGrid(3, np.array([[8]], dtype=np.uint64))


class TestLogitsToResidual:
    def test_argmax_all_negative(self):
        logits = FeatureMap(np.full((4, 2, 2), -1.0, dtype=np.float32))
        grid, qmap, _ = logits_to_residual(logits, QuantizerConfig(channels=4), RngStream(0))
        assert np.all(grid.words == np.uint64(0))
        assert np.all(qmap.data == np.float32(-0.5))

    def test_argmax_never_consumes_rng(self):
        logits = FeatureMap(np.zeros((4, 2, 2), dtype=np.float32))
        _, _, rng = logits_to_residual(logits, QuantizerConfig(channels=4), RngStream(42))
        assert rng.state == RngStream(42).state

    def test_sample_deterministic_per_seed(self):
        rng = np.random.default_rng(2)
        logits = FeatureMap(rng.standard_normal((4, 3, 3)).astype(np.float32))
        cfg = QuantizerConfig(channels=4, mode="sample", temperature=1.0)
        g1, m1, _ = logits_to_residual(logits, cfg, RngStream(5))
        g2, m2, _ = logits_to_residual(logits, cfg, RngStream(5))
        assert np.array_equal(g1.words, g2.words)
        assert np.array_equal(m1.data, m2.data)

    def test_sample_strong_logit_frequency(self):
        # sigmoid(20) ~ 1 - 2e-9: essentially every draw should set the bit
        logits = FeatureMap(np.full((2, 1, 1), 20.0, dtype=np.float32))
        cfg = QuantizerConfig(channels=2, mode="sample", temperature=1.0)
        stream = RngStream(9)
        hits = 0
        for _ in range(1000):
            grid, _, stream = logits_to_residual(logits, cfg, stream)
            hits += int(grid.words[0, 0] & np.uint64(1) == 1)
        assert hits / 1000 >= 0.99

    def test_sample_tracks_sigmoid_rate(self):
        logits = FeatureMap(np.zeros((2, 1, 1), dtype=np.float32))
        cfg = QuantizerConfig(channels=2, mode="sample", temperature=1.0)
        stream = RngStream(10)
        hits = 0
        for _ in range(2000):
            grid, _, stream = logits_to_residual(logits, cfg, stream)
            hits += int(grid.words[0, 0] & np.uint64(1) == 1)
        assert 0.45 <= hits / 2000 <= 0.55

    def test_bad_temperature_rejected(self):
        logits = FeatureMap(np.zeros((4, 1, 1), dtype=np.float32))
        cfg = QuantizerConfig(channels=4, mode="sample", temperature=0.0)
        with pytest.raises(ValueError):
            logits_to_residual(logits, cfg, RngStream(0))

    def test_channel_mismatch(self):
        logits = FeatureMap(np.zeros((3, 1, 1), dtype=np.float32))
        with pytest.raises(ValueError):
            logits_to_residual(logits, QuantizerConfig(channels=4), RngStream(0))


def test_config_validation():
    with pytest.raises(ValueError):
        QuantizerConfig(channels=1)
    with pytest.raises(ValueError):
        QuantizerConfig(channels=4, mode="beam")
