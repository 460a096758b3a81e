"""Scale-wise autoregressive transformer.

One shared transformer predicts a quantized residual grid per step: the
running feature map is pooled to the step resolution, embedded, run
through pre-norm blocks (self-attention, cross-attention to the text
rows, feed-forward), projected to per-site logits and quantized. Each
residual is bilinearly upsampled to the final resolution and summed into
the running map. Hooks fire on every self-attention layer right after
the Q/K/V projections, which is where all interventions attach.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .numerics import (
    FeatureMap,
    RngStream,
    average_pool,
    bilinear_upsample,
    matmul,
    mix64,
    ordered_mm,
    rng_uniform,
    softmax_lastaxis,
)
from .quantizer import BitGrid, QuantizerConfig, logits_to_residual
from .textenc import TextEmbedding, sinusoid_table
from .util import array_checksum

_LN_EPS = np.float32(1e-5)


@dataclass(frozen=True)
class ScaleSchedule:
    """Ordered per-step resolutions plus the key/fine stage step sets.

    Step indices are 1-based. Resolutions never decrease, the key stage
    starts at step 2 or later, and the fine stage sits strictly after it.
    """

    steps: tuple[tuple[int, int], ...]
    s_key: frozenset[int]
    s_fine: frozenset[int]

    def __post_init__(self):
        steps = tuple((int(h), int(w)) for h, w in self.steps)
        if not steps:
            raise ValueError("schedule needs at least one step")
        for (h0, w0), (h1, w1) in zip(steps, steps[1:]):
            if h1 < h0 or w1 < w0:
                raise ValueError("resolutions must be non-decreasing")
        if any(h < 1 or w < 1 for h, w in steps):
            raise ValueError("resolutions must be positive")
        s_key = frozenset(int(s) for s in self.s_key)
        s_fine = frozenset(int(s) for s in self.s_fine)
        n = len(steps)
        if not s_key or not s_fine:
            raise ValueError("key and fine stages must be non-empty")
        if s_key & s_fine:
            raise ValueError("key and fine stages must be disjoint")
        if min(s_key) < 2:
            raise ValueError("key stage must start at step 2 or later")
        if max(s_key) >= min(s_fine):
            raise ValueError("key stage must end before the fine stage starts")
        if max(s_key | s_fine) > n:
            raise ValueError("stage steps must lie within the schedule")
        object.__setattr__(self, "steps", steps)
        object.__setattr__(self, "s_key", s_key)
        object.__setattr__(self, "s_fine", s_fine)

    @property
    def num_steps(self) -> int:
        return len(self.steps)

    @property
    def final_hw(self) -> tuple[int, int]:
        return self.steps[-1]

    def stage(self, s: int) -> str:
        if s in self.s_key:
            return "key"
        if s in self.s_fine:
            return "fine"
        return "pre-key" if s < min(self.s_key) else "tail"

    def to_dict(self) -> dict:
        return {
            "steps": [list(hw) for hw in self.steps],
            "S_key": sorted(self.s_key),
            "S_fine": sorted(self.s_fine),
        }

    @staticmethod
    def from_dict(d: dict) -> "ScaleSchedule":
        return ScaleSchedule(
            steps=tuple(tuple(hw) for hw in d["steps"]),
            s_key=frozenset(d["S_key"]),
            s_fine=frozenset(d["S_fine"]),
        )


DEFAULT_SCHEDULE = ScaleSchedule(
    steps=(
        (1, 1), (2, 2), (4, 4), (6, 6), (8, 8), (12, 12),
        (16, 16), (20, 20), (24, 24), (28, 28), (32, 32), (32, 32),
    ),
    s_key=frozenset({2, 3}),
    s_fine=frozenset({4, 5, 6, 7}),
)


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 64
    n_heads: int = 4
    n_layers: int = 2
    c: int = 16
    d_text: int = 32
    schedule: ScaleSchedule = DEFAULT_SCHEDULE
    weight_seed: int = 0
    quantizer: Optional[QuantizerConfig] = None

    def __post_init__(self):
        if self.d_model < 1 or self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be a positive multiple of n_heads")
        if self.n_layers < 1:
            raise ValueError("n_layers must be >= 1")
        if self.quantizer is None:
            object.__setattr__(self, "quantizer", QuantizerConfig(channels=self.c))
        if self.quantizer.channels != self.c:
            raise ValueError("quantizer channel count must match c")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    def to_dict(self) -> dict:
        return {
            "d_model": self.d_model,
            "n_heads": self.n_heads,
            "n_layers": self.n_layers,
            "c": self.c,
            "d_text": self.d_text,
            "schedule": self.schedule.to_dict(),
            "weight_seed": self.weight_seed,
            "quantizer": {
                "channels": self.quantizer.channels,
                "mode": self.quantizer.mode,
                "temperature": self.quantizer.temperature,
            },
        }

    @staticmethod
    def from_dict(d: dict) -> "ModelConfig":
        q = d.get("quantizer")
        return ModelConfig(
            d_model=d.get("d_model", 64),
            n_heads=d.get("n_heads", 4),
            n_layers=d.get("n_layers", 2),
            c=d.get("c", 16),
            d_text=d.get("d_text", 32),
            schedule=ScaleSchedule.from_dict(d["schedule"])
            if "schedule" in d
            else DEFAULT_SCHEDULE,
            weight_seed=d.get("weight_seed", 0),
            quantizer=QuantizerConfig(**q) if q else None,
        )


@dataclass(frozen=True, eq=False)
class AttentionPacket:
    """Per-head Q/K/V for one (step, layer); shape (n_heads, tokens, d_head).

    K and V always carry the same token count; it may exceed the query
    count after key-stage widening.
    """

    step: int
    layer: int
    q: np.ndarray
    k: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        for name, arr in (("q", self.q), ("k", self.k), ("v", self.v)):
            if arr.ndim != 3 or arr.dtype != np.float32:
                raise ValueError(f"{name} must be float32 with shape (heads, tokens, d_head)")
        if self.k.shape[1] != self.v.shape[1]:
            raise ValueError("K and V token counts must match")
        if not (self.q.shape[0] == self.k.shape[0] == self.v.shape[0]):
            raise ValueError("head counts must match")
        if not (self.q.shape[2] == self.k.shape[2] == self.v.shape[2]):
            raise ValueError("head dims must match")

    @property
    def n_tokens(self) -> int:
        return self.q.shape[1]

    @property
    def kv_tokens(self) -> int:
        return self.k.shape[1]


@dataclass(frozen=True)
class HookContext:
    """Where a hook fired, plus a logger feeding the trace's hook log."""

    path: str
    step: int
    layer: int
    log: Callable[[dict], None]


AttentionHook = Callable[[HookContext, AttentionPacket], AttentionPacket]


@dataclass(frozen=True, eq=False)
class LayerWeights:
    sa_q: np.ndarray
    sa_k: np.ndarray
    sa_v: np.ndarray
    sa_o: np.ndarray
    ca_q: np.ndarray
    ca_k: np.ndarray
    ca_v: np.ndarray
    ca_o: np.ndarray
    ff1: np.ndarray
    ff2: np.ndarray


@dataclass(frozen=True, eq=False)
class Model:
    """Immutable weight bundle; shareable across threads."""

    cfg: ModelConfig
    sos: np.ndarray
    embed: np.ndarray
    layers: tuple[LayerWeights, ...]
    head: np.ndarray
    dec: np.ndarray
    dec_pinv: np.ndarray
    pos_enc: dict

    def weight_checksum(self) -> str:
        arrays = [self.sos, self.embed, self.head, self.dec]
        for lw in self.layers:
            arrays.extend(
                (lw.sa_q, lw.sa_k, lw.sa_v, lw.sa_o, lw.ca_q, lw.ca_k, lw.ca_v, lw.ca_o, lw.ff1, lw.ff2)
            )
        return array_checksum(*arrays)


def _draw_matrix(stream: RngStream, d_in: int, d_out: int) -> tuple[np.ndarray, RngStream]:
    # uniform in +-sqrt(3)/sqrt(fan_in): std is exactly 1/sqrt(fan_in)
    u, stream = rng_uniform(stream, (d_in, d_out))
    scale = math.sqrt(3.0) / math.sqrt(d_in)
    return ((2.0 * u - 1.0) * scale).astype(np.float32), stream


def _inv3(m: np.ndarray) -> np.ndarray:
    # closed-form 3x3 inverse (adjugate / determinant), float64
    a, b, c = m[0]
    d, e, f = m[1]
    g, h, i = m[2]
    det = a * (e * i - f * h) - b * (d * i - f * g) + c * (d * h - e * g)
    adj = np.array(
        [
            [e * i - f * h, c * h - b * i, b * f - c * e],
            [f * g - d * i, a * i - c * g, c * d - a * f],
            [d * h - e * g, b * g - a * h, a * e - b * d],
        ],
        dtype=np.float64,
    )
    return adj / det


def _pos_enc_2d(h: int, w: int, d_model: int) -> np.ndarray:
    # rows code the y coordinate in the first half, x in the second
    d_half = d_model // 2
    ys = sinusoid_table(h, d_half)
    xs = sinusoid_table(w, d_model - d_half)
    grid = np.concatenate(
        (
            np.repeat(ys, w, axis=0),
            np.tile(xs, (h, 1)),
        ),
        axis=1,
    )
    return np.ascontiguousarray(grid, dtype=np.float32)


def init_model(cfg: ModelConfig) -> Model:
    """Materialize all projection weights from the config's seed.

    Matrices are drawn in a fixed order from one splitmix64 stream and
    scaled by 1/sqrt(fan_in), so equal configs give bit-identical models.
    """
    stream = RngStream(mix64(cfg.weight_seed))
    sos, stream = _draw_matrix(stream, cfg.d_model, 1)
    sos = sos.reshape(-1)
    embed, stream = _draw_matrix(stream, cfg.c, cfg.d_model)
    layers = []
    d_ff = 2 * cfg.d_model
    for _ in range(cfg.n_layers):
        sa_q, stream = _draw_matrix(stream, cfg.d_model, cfg.d_model)
        sa_k, stream = _draw_matrix(stream, cfg.d_model, cfg.d_model)
        sa_v, stream = _draw_matrix(stream, cfg.d_model, cfg.d_model)
        sa_o, stream = _draw_matrix(stream, cfg.d_model, cfg.d_model)
        ca_q, stream = _draw_matrix(stream, cfg.d_model, cfg.d_model)
        ca_k, stream = _draw_matrix(stream, cfg.d_text, cfg.d_model)
        ca_v, stream = _draw_matrix(stream, cfg.d_text, cfg.d_model)
        ca_o, stream = _draw_matrix(stream, cfg.d_model, cfg.d_model)
        ff1, stream = _draw_matrix(stream, cfg.d_model, d_ff)
        ff2, stream = _draw_matrix(stream, d_ff, cfg.d_model)
        layers.append(
            LayerWeights(sa_q, sa_k, sa_v, sa_o, ca_q, ca_k, ca_v, ca_o, ff1, ff2)
        )
    head, stream = _draw_matrix(stream, cfg.d_model, cfg.c)
    dec, stream = _draw_matrix(stream, cfg.c, 3)
    # analytic left pseudo-inverse: (dec^T dec)^-1 dec^T, so z @ pinv @ dec == z
    d64 = dec.astype(np.float64)
    dec_pinv = (_inv3(d64.T @ d64) @ d64.T).astype(np.float32)
    pos_enc = {
        (h, w): _pos_enc_2d(h, w, cfg.d_model) for (h, w) in set(cfg.schedule.steps)
    }
    return Model(
        cfg=cfg,
        sos=sos,
        embed=embed,
        layers=tuple(layers),
        head=head,
        dec=dec,
        dec_pinv=np.ascontiguousarray(dec_pinv),
        pos_enc=pos_enc,
    )


def _layer_norm(x: np.ndarray) -> np.ndarray:
    mean = x.mean(axis=-1, keepdims=True, dtype=np.float32)
    centered = x - mean
    var = np.mean(centered * centered, axis=-1, keepdims=True, dtype=np.float32)
    return centered / np.sqrt(var + _LN_EPS)


def _split_heads(x: np.ndarray, n_heads: int) -> np.ndarray:
    n, d = x.shape
    return np.ascontiguousarray(x.reshape(n, n_heads, d // n_heads).transpose(1, 0, 2))


def _merge_heads(x: np.ndarray) -> np.ndarray:
    nh, n, dh = x.shape
    return np.ascontiguousarray(x.transpose(1, 0, 2)).reshape(n, nh * dh)


def attention_probs(packet: AttentionPacket) -> np.ndarray:
    """Softmaxed per-head attention weights, shape (heads, N_q, N_kv)."""
    scale = np.float32(1.0 / math.sqrt(packet.q.shape[-1]))
    scores = np.matmul(packet.q, packet.k.transpose(0, 2, 1))
    scores *= scale
    return softmax_lastaxis(scores)


def _attention_core(q, k, v, w_o) -> np.ndarray:
    # scores and context use the BLAS product; projections stay on the
    # order-pinned kernel
    scale = np.float32(1.0 / math.sqrt(q.shape[-1]))
    scores = np.matmul(q, k.transpose(0, 2, 1))
    scores *= scale
    probs = softmax_lastaxis(scores)
    ctx = np.matmul(probs, v)
    return matmul(_merge_heads(ctx), w_o)


def self_attention(model: Model, packet: AttentionPacket) -> np.ndarray:
    """Multi-head self-attention over a packet; K/V may outnumber Q."""
    if packet.k.shape[1] != packet.v.shape[1]:
        raise ValueError("K and V token counts must match")
    if packet.q.shape[2] != model.cfg.d_head:
        raise ValueError("packet head dim does not match the model")
    lw = model.layers[packet.layer]
    return _attention_core(packet.q, packet.k, packet.v, lw.sa_o)


def cross_attention(
    model: Model, tokens: np.ndarray, text: TextEmbedding, layer: int = 0
) -> np.ndarray:
    """Attend image tokens (queries) over the text rows (keys/values)."""
    if tokens.ndim != 2 or tokens.shape[1] != model.cfg.d_model:
        raise ValueError("tokens must be (N, d_model)")
    if text.dim != model.cfg.d_text:
        raise ValueError(f"text dim {text.dim} does not match d_text {model.cfg.d_text}")
    lw = model.layers[layer]
    nh = model.cfg.n_heads
    q = _split_heads(matmul(tokens, lw.ca_q), nh)
    k = _split_heads(matmul(text.data, lw.ca_k), nh)
    v = _split_heads(matmul(text.data, lw.ca_v), nh)
    return _attention_core(q, k, v, lw.ca_o)


@dataclass(frozen=True, eq=False)
class StepResult:
    residual: FeatureMap
    bits: BitGrid
    packets_pre: Optional[tuple[AttentionPacket, ...]]
    packets_post: Optional[tuple[AttentionPacket, ...]]
    rng: RngStream


def predict_residual(
    model: Model,
    f_prev: Optional[FeatureMap],
    text: TextEmbedding,
    s: int,
    hooks: Sequence[AttentionHook] = (),
    rng: RngStream = RngStream(0),
    *,
    retain_packets: bool = False,
    path: str = "generation",
    log: Callable[[dict], None] = lambda entry: None,
) -> StepResult:
    """Run one generation step and quantize its residual.

    Step 1 starts from the start-of-sequence vector broadcast over the
    first grid; later steps pool the accumulated full-resolution map down
    to the step resolution. Hooks run in order on each layer's Q/K/V
    packet before attention.
    """
    cfg = model.cfg
    sched = cfg.schedule
    if not 1 <= s <= sched.num_steps:
        raise ValueError(f"step {s} outside schedule of {sched.num_steps} steps")
    h, w = sched.steps[s - 1]
    n = h * w
    if s == 1:
        tokens = np.tile(model.sos, (n, 1))
    else:
        if f_prev is None:
            raise ValueError("steps after the first need the accumulated feature map")
        fh, fw = sched.final_hw
        if (f_prev.channels, f_prev.height, f_prev.width) != (cfg.c, fh, fw):
            raise ValueError("accumulated features must be at the final resolution")
        pooled = average_pool(f_prev.data, h, w)
        sites = np.ascontiguousarray(pooled.transpose(1, 2, 0).reshape(n, cfg.c))
        tokens = matmul(sites, model.embed)
    tokens = tokens + model.pos_enc[(h, w)]

    packets_pre = [] if retain_packets else None
    packets_post = [] if retain_packets else None
    for layer in range(cfg.n_layers):
        lw = model.layers[layer]
        normed = _layer_norm(tokens)
        packet = AttentionPacket(
            step=s,
            layer=layer,
            q=_split_heads(matmul(normed, lw.sa_q), cfg.n_heads),
            k=_split_heads(matmul(normed, lw.sa_k), cfg.n_heads),
            v=_split_heads(matmul(normed, lw.sa_v), cfg.n_heads),
        )
        if packets_pre is not None:
            packets_pre.append(packet)
        ctx = HookContext(path=path, step=s, layer=layer, log=log)
        for hook in hooks:
            packet = hook(ctx, packet)
        if packets_post is not None:
            packets_post.append(packet)
        tokens = tokens + self_attention(model, packet)
        tokens = tokens + cross_attention(model, _layer_norm(tokens), text, layer)
        normed = _layer_norm(tokens)
        hidden = matmul(normed, lw.ff1)
        np.maximum(hidden, np.float32(0.0), out=hidden)
        tokens = tokens + matmul(hidden, lw.ff2)

    logits = matmul(_layer_norm(tokens), model.head)
    logit_map = FeatureMap(
        np.ascontiguousarray(logits.reshape(h, w, cfg.c).transpose(2, 0, 1))
    )
    bits, residual, rng = logits_to_residual(logit_map, cfg.quantizer, rng)
    return StepResult(
        residual=residual,
        bits=bits,
        packets_pre=tuple(packets_pre) if packets_pre is not None else None,
        packets_post=tuple(packets_post) if packets_post is not None else None,
        rng=rng,
    )


@dataclass(eq=False)
class TraceStep:
    """Everything recorded for one generation step."""

    step: int
    residual: FeatureMap
    bits: BitGrid
    accumulated: FeatureMap
    synthetic: bool = False
    packets_pre: Optional[tuple[AttentionPacket, ...]] = None
    packets_post: Optional[tuple[AttentionPacket, ...]] = None


@dataclass(eq=False)
class GenerationTrace:
    """Per-step record of residuals, accumulated maps and applied hooks."""

    schedule: ScaleSchedule
    steps: list[TraceStep] = field(default_factory=list)
    hook_log: list[dict] = field(default_factory=list)

    @property
    def final_feature(self) -> FeatureMap:
        if not self.steps:
            raise ValueError("trace is empty")
        return self.steps[-1].accumulated

    def log(self, entry: dict) -> None:
        self.hook_log.append(entry)

    def strip_packets(self) -> None:
        for st in self.steps:
            st.packets_pre = None
            st.packets_post = None

    def step_checksums(self, s: int) -> dict:
        st = self.steps[s - 1]
        return {
            "residual": array_checksum(st.residual.data),
            "bits": array_checksum(st.bits.words),
            "feature": array_checksum(st.accumulated.data),
            "synthetic": st.synthetic,
        }


def accumulate(f_prev: Optional[FeatureMap], residual: FeatureMap, final_hw) -> FeatureMap:
    """Add the upsampled residual onto the running full-resolution map."""
    up = bilinear_upsample(residual, final_hw[0], final_hw[1])
    if f_prev is None:
        base = np.zeros_like(up.data)
    else:
        base = f_prev.data
    return FeatureMap(base + up.data)


def generate(
    model: Model,
    text: TextEmbedding,
    plan=None,
    rng: RngStream = RngStream(0),
    *,
    retain_packets: bool = False,
    extra_hooks: Sequence[AttentionHook] = (),
    sources: Optional[dict] = None,
    path: str = "generation",
) -> GenerationTrace:
    """Run the full schedule for a single path and record its trace.

    Accepts an InterventionPlan restricted to single-path mechanisms
    (prompt injections and Q/K/V swaps); the three-path sharing stack
    needs the pipeline runner.
    """
    from . import interventions  # local import to avoid a cycle

    cfg = model.cfg
    sched = cfg.schedule
    plan = interventions.InterventionPlan() if plan is None else plan
    if plan.feature_init or plan.ksas or plan.aqs:
        raise ValueError(
            "feature_init/ksas/aqs need the three-path pipeline; "
            "single-path generate supports injections and swaps only"
        )
    interventions.validate_injections(plan, sched, cfg.d_text)
    hooks = list(extra_hooks)
    if plan.qkv_swap is not None:
        hooks.append(interventions.swap_hook_from_plan(plan, model, sources))

    trace = GenerationTrace(schedule=sched)
    current: Optional[FeatureMap] = None
    for s in range(1, sched.num_steps + 1):
        text_s = plan.prompt_injections.get(s, text)
        if s in plan.prompt_injections:
            trace.log(
                {
                    "path": path,
                    "kind": "prompt_injection",
                    "step": s,
                    "text_checksum": array_checksum(text_s.data),
                }
            )
        result = predict_residual(
            model,
            current,
            text_s,
            s,
            hooks,
            rng,
            retain_packets=retain_packets,
            path=path,
            log=trace.log,
        )
        rng = result.rng
        current = accumulate(current, result.residual, sched.final_hw)
        trace.steps.append(
            TraceStep(
                step=s,
                residual=result.residual,
                bits=result.bits,
                accumulated=current,
                packets_pre=result.packets_pre,
                packets_post=result.packets_post,
            )
        )
    return trace
