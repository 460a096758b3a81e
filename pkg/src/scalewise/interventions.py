"""Inference-time interventions.

Three mechanisms personalize generation without touching the weights:

* feature initialization: before the key stage runs, the generation
  path's accumulated features are replaced with features encoded from
  the reference style image;
* key-stage attention sharing: during key-stage steps the generation
  query is replaced by the content query, keys concatenate content then
  style, and values concatenate generation then style;
* adaptive query sharing: during fine-stage steps the generation query
  is blended with the content query, weighted by their cosine
  similarity (clamped to [0, 1]).

Two diagnostic hooks round this out: replacing the text conditioning at
exactly one step, and replacing Q, K or V with a recorded trace's
tensors across all self-attention layers.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .model import (
    AttentionHook,
    AttentionPacket,
    GenerationTrace,
    Model,
    ScaleSchedule,
)
from .numerics import FeatureMap, bilinear_upsample, cosine_sim
from .textenc import TextEmbedding

SWAP_COMPONENTS = ("Q", "K", "V")


@dataclass(frozen=True)
class QkvSwap:
    """Replace one attention component from a recorded source trace."""

    component: str
    steps: Optional[frozenset[int]] = None  # None means every step
    source: str = "source"

    def __post_init__(self):
        if self.component not in SWAP_COMPONENTS:
            raise ValueError(f"component must be one of {SWAP_COMPONENTS}")
        if self.steps is not None:
            object.__setattr__(self, "steps", frozenset(int(s) for s in self.steps))


@dataclass(frozen=True)
class InterventionPlan:
    """Declarative description of every hook a run should fire."""

    feature_init: bool = False
    ksas: bool = False
    aqs: bool = False
    alpha_override: Optional[float] = None
    s_key: frozenset[int] = frozenset({2, 3})
    s_fine: frozenset[int] = frozenset({4, 5, 6, 7})
    prompt_injections: dict[int, TextEmbedding] = field(default_factory=dict)
    qkv_swap: Optional[QkvSwap] = None

    def __post_init__(self):
        if self.alpha_override is not None and not 0.0 <= self.alpha_override <= 1.0:
            raise ValueError("alpha_override must lie in [0, 1]")
        object.__setattr__(self, "s_key", frozenset(int(s) for s in self.s_key))
        object.__setattr__(self, "s_fine", frozenset(int(s) for s in self.s_fine))
        object.__setattr__(self, "prompt_injections", dict(self.prompt_injections))


def default_plan(schedule: ScaleSchedule) -> InterventionPlan:
    """The full stack: init + key-stage sharing + adaptive query sharing."""
    return InterventionPlan(
        feature_init=True,
        ksas=True,
        aqs=True,
        s_key=schedule.s_key,
        s_fine=schedule.s_fine,
    )


def neutral_plan(schedule: ScaleSchedule) -> InterventionPlan:
    """Everything off except query sharing pinned to alpha = 1 (a no-op blend)."""
    return InterventionPlan(
        feature_init=False,
        ksas=False,
        aqs=True,
        alpha_override=1.0,
        s_key=schedule.s_key,
        s_fine=schedule.s_fine,
    )


def validate_injections(plan: InterventionPlan, schedule: ScaleSchedule, d_text: int) -> None:
    for s, emb in plan.prompt_injections.items():
        if not 1 <= s <= schedule.num_steps:
            raise ValueError(f"injection step {s} outside the schedule")
        if emb.dim != d_text:
            raise ValueError("injected embedding dim does not match the model")


def inject_prompt(plan: InterventionPlan, s: int, text_alt: TextEmbedding) -> InterventionPlan:
    """Return a plan whose conditioning at exactly step s is text_alt."""
    if s < 1:
        raise ValueError("injection step must be >= 1")
    if s in plan.prompt_injections:
        raise ValueError(f"duplicate injection at step {s}")
    injections = dict(plan.prompt_injections)
    injections[s] = text_alt
    return replace(plan, prompt_injections=injections)


def ksas(
    gen: AttentionPacket, con: AttentionPacket, sty: AttentionPacket
) -> AttentionPacket:
    """Key-stage attention sharing.

    Query taken from the content path; keys widen to [content; style],
    values to [generation; style]. The returned packet has twice the
    key/value tokens of its inputs.
    """
    for name, other in (("content", con), ("style", sty)):
        if (other.step, other.layer) != (gen.step, gen.layer):
            raise ValueError(f"{name} packet is from a different step/layer")
        if other.q.shape != gen.q.shape or other.k.shape != gen.k.shape or other.v.shape != gen.v.shape:
            raise ValueError(f"{name} packet shape does not match the generation packet")
    return replace(
        gen,
        q=con.q,
        k=np.concatenate((con.k, sty.k), axis=1),
        v=np.concatenate((gen.v, sty.v), axis=1),
    )


def aqs(
    q_gen: np.ndarray, q_con: np.ndarray, alpha_override: Optional[float] = None
) -> tuple[np.ndarray, float]:
    """Similarity-weighted convex blend of generation and content queries.

    alpha is the cosine similarity of the flattened queries clamped to
    [0, 1] (an override wins when given); the blend runs in float64 so
    every output element stays inside the interval spanned by its
    inputs, and alpha = 1 returns q_gen bit-exactly.
    """
    q_gen = np.asarray(q_gen, dtype=np.float32)
    q_con = np.asarray(q_con, dtype=np.float32)
    if q_gen.shape != q_con.shape:
        raise ValueError(f"query shapes differ: {q_gen.shape} vs {q_con.shape}")
    if alpha_override is None:
        alpha = min(1.0, max(0.0, cosine_sim(q_gen.reshape(-1), q_con.reshape(-1))))
    else:
        if not 0.0 <= alpha_override <= 1.0:
            raise ValueError("alpha_override must lie in [0, 1]")
        alpha = float(alpha_override)
    blended = (
        alpha * q_gen.astype(np.float64) + (1.0 - alpha) * q_con.astype(np.float64)
    ).astype(np.float32)
    return blended, alpha


def swap_qkv(
    source: GenerationTrace,
    component: str,
    steps: Optional[frozenset[int]] = None,
    source_id: str = "source",
) -> AttentionHook:
    """Hook that swaps one Q/K/V component in from a recorded trace.

    The source trace must have retained attention packets for every
    step the swap covers.
    """
    if component not in SWAP_COMPONENTS:
        raise ValueError(f"component must be one of {SWAP_COMPONENTS}")
    wanted = set(steps) if steps is not None else set(
        range(1, source.schedule.num_steps + 1)
    )
    for s in sorted(wanted):
        if s > len(source.steps) or source.steps[s - 1].packets_pre is None:
            raise ValueError(f"source trace has no recorded packets for step {s}")

    attr = {"Q": "q", "K": "k", "V": "v"}[component]

    def hook(ctx, packet: AttentionPacket) -> AttentionPacket:
        if ctx.step not in wanted:
            return packet
        recorded = source.steps[ctx.step - 1].packets_pre[ctx.layer]
        arr = getattr(recorded, attr)
        if arr.shape != getattr(packet, attr).shape:
            raise ValueError(
                f"recorded {component} shape {arr.shape} does not match the target"
            )
        ctx.log(
            {
                "path": ctx.path,
                "kind": "qkv_swap",
                "step": ctx.step,
                "layer": ctx.layer,
                "component": component,
                "source": source_id,
            }
        )
        return replace(packet, **{attr: arr})

    return hook


def swap_hook_from_plan(
    plan: InterventionPlan, model: Model, sources: Optional[dict]
) -> AttentionHook:
    spec = plan.qkv_swap
    if not sources or spec.source not in sources:
        raise ValueError(f"qkv_swap source {spec.source!r} not supplied")
    src = sources[spec.source]
    if src.schedule.steps != model.cfg.schedule.steps:
        raise ValueError("swap source was recorded under a different schedule")
    return swap_qkv(src, spec.component, spec.steps, source_id=spec.source)


@dataclass(eq=False)
class PathState:
    """One path's rolling state inside the lockstep runner."""

    name: str
    text: TextEmbedding
    trace: GenerationTrace
    current: Optional[FeatureMap] = None


@dataclass(eq=False)
class PathSet:
    content: PathState
    style: PathState
    generation: PathState

    def all(self) -> tuple[PathState, PathState, PathState]:
        return (self.content, self.style, self.generation)


def feature_init(
    paths: PathSet, style_feats: list[FeatureMap], s_key: frozenset[int]
) -> PathSet:
    """Replace pre-key generation features with the style image's.

    For every completed step s <= min(s_key), the generation path's
    accumulated map becomes the upsampled style feature for that step.
    Replaced steps are marked synthetic; calling this again is a no-op
    for them, so the runner can invoke it at every step boundary.
    """
    _replace_path_features(paths.generation, style_feats, s_key)
    return paths


def _replace_path_features(
    path: PathState, style_feats: list[FeatureMap], s_key: frozenset[int]
) -> None:
    s0 = min(s_key)
    final_h, final_w = path.trace.schedule.final_hw
    for s in range(1, min(s0, len(path.trace.steps)) + 1):
        step = path.trace.steps[s - 1]
        if step.synthetic:
            continue
        if s > len(style_feats):
            raise ValueError(f"style features missing scale for step {s}")
        feat = style_feats[s - 1]
        expected = path.trace.schedule.steps[s - 1]
        if (feat.height, feat.width) != expected:
            raise ValueError(
                f"style feature for step {s} has resolution "
                f"{feat.height}x{feat.width}, expected {expected[0]}x{expected[1]}"
            )
        step.accumulated = bilinear_upsample(feat, final_h, final_w)
        step.synthetic = True
        if s == len(path.trace.steps):
            path.current = step.accumulated
        path.trace.log({"path": path.name, "kind": "feature_init", "step": s})


def plan_to_dict(plan: InterventionPlan) -> dict:
    """JSON form of a plan; embeddings serialize as nested float lists."""
    return {
        "feature_init": plan.feature_init,
        "ksas": plan.ksas,
        "aqs": plan.aqs,
        "alpha_override": plan.alpha_override,
        "S_key": sorted(plan.s_key),
        "S_fine": sorted(plan.s_fine),
        "prompt_injections": {
            str(s): [[float(v) for v in row] for row in emb.data]
            for s, emb in sorted(plan.prompt_injections.items())
        },
        "qkv_swap": None
        if plan.qkv_swap is None
        else {
            "component": plan.qkv_swap.component,
            "steps": None
            if plan.qkv_swap.steps is None
            else sorted(plan.qkv_swap.steps),
            "source": plan.qkv_swap.source,
        },
    }


def plan_from_dict(d: dict) -> InterventionPlan:
    swap = d.get("qkv_swap")
    return InterventionPlan(
        feature_init=bool(d.get("feature_init", False)),
        ksas=bool(d.get("ksas", False)),
        aqs=bool(d.get("aqs", False)),
        alpha_override=d.get("alpha_override"),
        s_key=frozenset(d.get("S_key", {2, 3})),
        s_fine=frozenset(d.get("S_fine", {4, 5, 6, 7})),
        prompt_injections={
            int(s): TextEmbedding(np.array(rows, dtype=np.float32))
            for s, rows in d.get("prompt_injections", {}).items()
        },
        qkv_swap=None
        if swap is None
        else QkvSwap(
            component=swap["component"],
            steps=None if swap.get("steps") is None else frozenset(swap["steps"]),
            source=swap.get("source", "source"),
        ),
    )
