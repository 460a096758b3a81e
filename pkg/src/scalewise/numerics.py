"""Deterministic float32 tensor kernels.

Everything in this module is pure: identical inputs produce bit-identical
outputs across runs on a given build. Matrix products use a fixed
k-ascending summation order so results can be reproduced by a scalar
reference loop; transcendental functions (exp, sin, cos) follow the
platform libm and are therefore pinned per build rather than per spec of
IEEE 754.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Token matrices are plain 2-D float32 arrays, one row per token.
TokenMatrix = np.ndarray

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """Dense c x h x w float32 grid, row-major and always finite."""

    data: np.ndarray

    def __post_init__(self):
        d = np.ascontiguousarray(self.data, dtype=np.float32)
        if d.ndim != 3:
            raise ValueError(f"FeatureMap data must be 3-D (c, h, w), got shape {d.shape}")
        if d.size == 0:
            raise ValueError("FeatureMap must be non-empty")
        if not np.isfinite(d).all():
            raise ValueError("FeatureMap entries must be finite")
        object.__setattr__(self, "data", d)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class RngStream:
    """Splitmix64 counter stream, advanced by value (never in place)."""

    state: int = 0

    def __post_init__(self):
        object.__setattr__(self, "state", int(self.state) & _MASK64)


def mix64(z: int) -> int:
    """Splitmix64 finalizer; also used to derive independent substreams."""
    z &= _MASK64
    z ^= z >> 30
    z = (z * _MIX1) & _MASK64
    z ^= z >> 27
    z = (z * _MIX2) & _MASK64
    z ^= z >> 31
    return z


def rng_next(s: RngStream) -> tuple[float, RngStream]:
    """Return a uniform double in [0, 1) and the advanced stream.

    The state advances by the splitmix64 increment; the output is the
    mixed state scaled by 2**-53, so the full 53-bit mantissa is random.
    """
    state = (s.state + _GAMMA) & _MASK64
    z = mix64(state)
    return (z >> 11) * 2.0**-53, RngStream(state)


def rng_uniform(s: RngStream, shape) -> tuple[np.ndarray, RngStream]:
    """Vectorized rng_next: draw a float64 array of uniforms in [0, 1).

    Produces exactly the sequence n repeated rng_next calls would, with
    the stream advanced n times.
    """
    shape = tuple(int(v) for v in np.atleast_1d(shape))
    n = 1
    for v in shape:
        n *= v
    idx = np.arange(1, n + 1, dtype=np.uint64)
    z = np.uint64(s.state) + idx * np.uint64(_GAMMA)
    z ^= z >> np.uint64(30)
    z *= np.uint64(_MIX1)
    z ^= z >> np.uint64(27)
    z *= np.uint64(_MIX2)
    z ^= z >> np.uint64(31)
    u = (z >> np.uint64(11)).astype(np.float64) * 2.0**-53
    return u.reshape(shape), RngStream(s.state + n * _GAMMA)


def matmul(a: TokenMatrix, b: TokenMatrix) -> TokenMatrix:
    """Float32 matrix product with fixed row-major summation order.

    Accumulates over k in ascending order with float32 rounding at every
    step, so the result matches a scalar triple loop bit for bit. b may
    be any 2-D view (a transpose works fine).
    """
    a = np.asarray(a, dtype=np.float32)
    b = np.asarray(b, dtype=np.float32)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("matmul expects 2-D operands")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"inner dimensions disagree: {a.shape} x {b.shape}")
    return ordered_mm(a, b)


def ordered_mm(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """k-ascending accumulation core; supports leading batch dimensions."""
    out = np.zeros(a.shape[:-1] + (b.shape[-1],), dtype=np.float32)
    tmp = np.empty_like(out)
    for k in range(a.shape[-1]):
        np.multiply(a[..., :, k : k + 1], b[..., k : k + 1, :], out=tmp)
        out += tmp
    return out


def softmax_rows(m: TokenMatrix) -> TokenMatrix:
    """Row-wise softmax with per-row max subtraction for stability."""
    m = np.asarray(m, dtype=np.float32)
    if m.ndim != 2:
        raise ValueError("softmax_rows expects a 2-D matrix")
    return softmax_lastaxis(m.copy())


def softmax_lastaxis(scores: np.ndarray) -> np.ndarray:
    """In-place stabilized softmax over the last axis of a float32 array."""
    np.subtract(scores, scores.max(axis=-1, keepdims=True), out=scores)
    np.exp(scores, out=scores)
    scores /= scores.sum(axis=-1, keepdims=True)
    return scores


def cosine_sim(a, b) -> float:
    """Cosine similarity of two flat vectors, clamped to [-1, 1].

    Inputs of any shape are flattened. Returns 0.0 when either norm is
    below 1e-12 so degenerate inputs stay well-defined.
    """
    a = np.asarray(a, dtype=np.float32).reshape(-1)
    b = np.asarray(b, dtype=np.float32).reshape(-1)
    if a.shape[0] != b.shape[0]:
        raise ValueError(f"length mismatch: {a.shape[0]} vs {b.shape[0]}")
    a64 = a.astype(np.float64)
    b64 = b.astype(np.float64)
    na = float(np.dot(a64, a64))
    nb = float(np.dot(b64, b64))
    if math.sqrt(na) < 1e-12 or math.sqrt(nb) < 1e-12:
        return 0.0
    sim = float(np.dot(a64, b64)) / math.sqrt(na * nb)
    return min(1.0, max(-1.0, sim))


def bilinear_upsample(src: FeatureMap, h: int, w: int) -> FeatureMap:
    """Upsample to (h, w), sampling centers at (i + 0.5) * scale - 0.5.

    Border samples clamp to the edge. Exact on constant fields and a
    bit-identical copy when the target equals the source size. Targets
    smaller than the source are rejected.
    """
    if h < 1 or w < 1:
        raise ValueError("target size must be positive")
    if h < src.height or w < src.width:
        raise ValueError(
            f"target {h}x{w} smaller than source {src.height}x{src.width}"
        )
    if (h, w) == (src.height, src.width):
        return FeatureMap(src.data.copy())
    return FeatureMap(resample_bilinear(src.data, h, w))


def resample_bilinear(data: np.ndarray, h: int, w: int) -> np.ndarray:
    """Bilinear resampling core for (..., H, W) arrays; any target size.

    The two-stage lerp (rows then columns) keeps constant fields exact.
    """
    data = np.asarray(data, dtype=np.float32)
    y0, y1, wy = _sample_axis(data.shape[-2], h)
    x0, x1, wx = _sample_axis(data.shape[-1], w)
    g00 = data[..., y0[:, None], x0[None, :]]
    g01 = data[..., y0[:, None], x1[None, :]]
    g10 = data[..., y1[:, None], x0[None, :]]
    g11 = data[..., y1[:, None], x1[None, :]]
    wy = wy[:, None].astype(np.float32)
    wx = wx[None, :].astype(np.float32)
    top = g00 + wx * (g01 - g00)
    bottom = g10 + wx * (g11 - g10)
    return top + wy * (bottom - top)


def _sample_axis(n_src: int, n_dst: int):
    pos = (np.arange(n_dst, dtype=np.float64) + 0.5) * (n_src / n_dst) - 0.5
    pos = np.clip(pos, 0.0, float(n_src - 1))
    i0 = np.floor(pos).astype(np.int64)
    np.minimum(i0, n_src - 1, out=i0)
    i1 = np.minimum(i0 + 1, n_src - 1)
    return i0, i1, pos - i0


def average_pool(data: np.ndarray, h: int, w: int) -> np.ndarray:
    """Adaptive mean pooling of (c, H, W) to (c, h, w).

    Block i spans source rows floor(i*H/h) .. floor((i+1)*H/h); sums run
    in float64 via an integral image, then cast back to float32.
    """
    data = np.asarray(data)
    c, src_h, src_w = data.shape
    if h < 1 or w < 1 or h > src_h or w > src_w:
        raise ValueError(f"cannot pool {src_h}x{src_w} to {h}x{w}")
    integral = np.zeros((c, src_h + 1, src_w + 1), dtype=np.float64)
    integral[:, 1:, 1:] = data.astype(np.float64).cumsum(axis=1).cumsum(axis=2)
    ey = (np.arange(h + 1, dtype=np.int64) * src_h) // h
    ex = (np.arange(w + 1, dtype=np.int64) * src_w) // w
    corners = integral[:, ey][:, :, ex]
    sums = (
        corners[:, 1:, 1:]
        - corners[:, :-1, 1:]
        - corners[:, 1:, :-1]
        + corners[:, :-1, :-1]
    )
    areas = ((ey[1:] - ey[:-1])[:, None] * (ex[1:] - ex[:-1])[None, :]).astype(np.float64)
    return (sums / areas).astype(np.float32)
