"""Three-path orchestration.

personalize() runs content, style and generation paths in lockstep: the
content path sees the content prompt, the style path the style prompt,
and the generation path the composed "<content> in <style>" prompt.
Within each step the content and style paths run first so their Q/K/V
packets can feed the generation path's sharing hooks. Each path owns an
independent splitmix64 stream derived from (seed, path name), so a
path's trace never depends on the other paths' sampling.
"""

from __future__ import annotations

from dataclasses import dataclass, replace as dc_replace
from pathlib import Path
from typing import Optional

from .codec import Image, decode, encode_style, read_ppm, resample_image
from .interventions import (
    InterventionPlan,
    PathSet,
    PathState,
    aqs,
    default_plan,
    feature_init,
    ksas,
    neutral_plan,
    swap_hook_from_plan,
    validate_injections,
)
from .model import (
    GenerationTrace,
    Model,
    ModelConfig,
    RngStream,
    TraceStep,
    accumulate,
    generate,
    init_model,
    predict_residual,
)
from .numerics import FeatureMap, mix64
from .textenc import TextEmbedding, build_gen_prompt, encode_prompt, fnv1a64
from .util import array_checksum, config_hash

PATH_NAMES = ("content", "style", "generation")


def path_stream(seed: int, name: str) -> RngStream:
    """Independent per-path stream derived from the run seed and path name."""
    return RngStream(mix64((int(seed) ^ fnv1a64(name)) & ((1 << 64) - 1)))


@dataclass(frozen=True)
class PersonalizationRequest:
    content_prompt: str
    style_prompt: str
    style_image_path: str
    seed: int = 0
    cfg: ModelConfig = ModelConfig()
    plan_overrides: Optional[dict] = None

    def __post_init__(self):
        if not self.content_prompt or not self.style_prompt:
            raise ValueError("content and style prompts must be non-empty")


@dataclass(eq=False)
class TraceBundle:
    """All three traces plus enough config to reproduce the run."""

    traces: dict[str, GenerationTrace]
    plan: InterventionPlan
    cfg: ModelConfig
    seed: int
    prompts: dict[str, str]

    def hook_entries(self, kind: Optional[str] = None, path: Optional[str] = None) -> list[dict]:
        entries = []
        for trace in self.traces.values():
            entries.extend(trace.hook_log)
        if kind is not None:
            entries = [e for e in entries if e.get("kind") == kind]
        if path is not None:
            entries = [e for e in entries if e.get("path") == path]
        return entries

    def report(self) -> dict:
        """JSON-ready report: per step, per-path checksums plus applied hooks."""
        n = self.cfg.schedule.num_steps
        steps = []
        for s in range(1, n + 1):
            hooks = [
                e
                for e in self.hook_entries()
                if e.get("step") == s
            ]
            steps.append(
                {
                    "step": s,
                    "paths": {
                        name: trace.step_checksums(s)
                        for name, trace in self.traces.items()
                    },
                    "hooks": sorted(
                        hooks, key=lambda e: (e.get("path", ""), e.get("kind", ""), e.get("layer", -1))
                    ),
                    "alphas": [
                        e["alpha"]
                        for e in hooks
                        if e.get("kind") == "aqs"
                    ],
                }
            )
        return {
            "config_hash": config_hash(self.run_config()),
            "schedule": self.cfg.schedule.to_dict(),
            "prompts": self.prompts,
            "seed": self.seed,
            "steps": steps,
        }

    def run_config(self) -> dict:
        from .interventions import plan_to_dict

        return {
            "model": self.cfg.to_dict(),
            "plan": plan_to_dict(self.plan),
            "seed": self.seed,
            "prompts": self.prompts,
        }


def merge_plan(plan: InterventionPlan, overrides: Optional[dict]) -> InterventionPlan:
    """Apply partial overrides (plain dict of plan fields) onto a plan."""
    if not overrides:
        return plan
    allowed = {"feature_init", "ksas", "aqs", "alpha_override", "prompt_injections", "qkv_swap"}
    unknown = set(overrides) - allowed
    if unknown:
        raise ValueError(f"unknown plan override fields: {sorted(unknown)}")
    return dc_replace(plan, **overrides)


def run_lockstep(
    model: Model,
    texts: dict[str, TextEmbedding],
    plan: InterventionPlan,
    seed: int,
    style_feats: Optional[list[FeatureMap]] = None,
    *,
    retain_packets: bool = False,
    extra_hooks: Optional[dict] = None,
    sources: Optional[dict] = None,
) -> PathSet:
    """Advance all three paths one step at a time, firing plan hooks.

    The generation path runs last within each step, consuming the
    content/style packets recorded moments earlier at the same step.
    """
    cfg = model.cfg
    sched = cfg.schedule
    validate_injections(plan, sched, cfg.d_text)
    if plan.feature_init and style_feats is None:
        raise ValueError("feature_init requires style features")
    extra_hooks = extra_hooks or {}

    paths = PathSet(
        content=PathState("content", texts["content"], GenerationTrace(sched)),
        style=PathState("style", texts["style"], GenerationTrace(sched)),
        generation=PathState("generation", texts["generation"], GenerationTrace(sched)),
    )

    def sharing_hook(ctx, packet):
        s = ctx.step
        if plan.ksas and s in plan.s_key:
            con_p = paths.content.trace.steps[s - 1].packets_pre[ctx.layer]
            sty_p = paths.style.trace.steps[s - 1].packets_pre[ctx.layer]
            packet = ksas(packet, con_p, sty_p)
            ctx.log(
                {
                    "path": ctx.path,
                    "kind": "ksas",
                    "step": s,
                    "layer": ctx.layer,
                    "n_tokens": packet.n_tokens,
                    "k_tokens": packet.k.shape[1],
                    "v_tokens": packet.v.shape[1],
                }
            )
        if plan.aqs and s in plan.s_fine:
            con_p = paths.content.trace.steps[s - 1].packets_pre[ctx.layer]
            blended, alpha = aqs(packet.q, con_p.q, plan.alpha_override)
            packet = dc_replace(packet, q=blended)
            ctx.log(
                {
                    "path": ctx.path,
                    "kind": "aqs",
                    "step": s,
                    "layer": ctx.layer,
                    "alpha": alpha,
                }
            )
        return packet

    hooks_by_path = {
        "content": list(extra_hooks.get("content", ())),
        "style": list(extra_hooks.get("style", ())),
        "generation": list(extra_hooks.get("generation", ())),
    }
    if plan.qkv_swap is not None:
        hooks_by_path["generation"].append(swap_hook_from_plan(plan, model, sources))
    hooks_by_path["generation"].append(sharing_hook)

    rngs = {name: path_stream(seed, name) for name in PATH_NAMES}

    for s in range(1, sched.num_steps + 1):
        for state in paths.all():
            text_s = state.text
            if state.name == "generation" and s in plan.prompt_injections:
                text_s = plan.prompt_injections[s]
                state.trace.log(
                    {
                        "path": state.name,
                        "kind": "prompt_injection",
                        "step": s,
                        "text_checksum": array_checksum(text_s.data),
                    }
                )
            result = predict_residual(
                model,
                state.current,
                text_s,
                s,
                hooks_by_path[state.name],
                rngs[state.name],
                retain_packets=True,
                path=state.name,
                log=state.trace.log,
            )
            rngs[state.name] = result.rng
            state.current = accumulate(state.current, result.residual, sched.final_hw)
            state.trace.steps.append(
                TraceStep(
                    step=s,
                    residual=result.residual,
                    bits=result.bits,
                    accumulated=state.current,
                    packets_pre=result.packets_pre,
                    packets_post=result.packets_post,
                )
            )
        if plan.feature_init and s <= min(plan.s_key):
            feature_init(paths, style_feats, plan.s_key)
            _replace_style_path(paths, style_feats, plan.s_key)
        # lockstep: a length mismatch here is an internal defect
        assert len({len(p.trace.steps) for p in paths.all()}) == 1

    if not retain_packets:
        for state in paths.all():
            state.trace.strip_packets()
    return paths


def _replace_style_path(paths: PathSet, style_feats, s_key) -> None:
    # the style path reconstructs the reference image before the key
    # stage, so its shared K/V reflect the reference rather than a pure
    # text rollout
    from .interventions import _replace_path_features

    _replace_path_features(paths.style, style_feats, s_key)


def personalize(
    req: PersonalizationRequest,
    *,
    retain_packets: bool = False,
    extra_hooks: Optional[dict] = None,
) -> tuple[Image, TraceBundle]:
    """Full style personalization from a reference image and two prompts."""
    model = init_model(req.cfg)
    style_img = read_ppm(req.style_image_path)
    fh, fw = req.cfg.schedule.final_hw
    if (style_img.height, style_img.width) != (fh, fw):
        style_img = resample_image(style_img, fh, fw)
    style_feats = encode_style(style_img, model)
    plan = merge_plan(default_plan(req.cfg.schedule), req.plan_overrides)
    prompts = {
        "content": req.content_prompt,
        "style": req.style_prompt,
        "generation": build_gen_prompt(req.content_prompt, req.style_prompt),
    }
    texts = {k: encode_prompt(v, req.cfg.d_text) for k, v in prompts.items()}
    paths = run_lockstep(
        model,
        texts,
        plan,
        req.seed,
        style_feats,
        retain_packets=retain_packets,
        extra_hooks=extra_hooks,
    )
    image = decode(paths.generation.trace.final_feature, model)
    bundle = TraceBundle(
        traces={p.name: p.trace for p in paths.all()},
        plan=plan,
        cfg=req.cfg,
        seed=req.seed,
        prompts=prompts,
    )
    return image, bundle


def style_aligned_generate(
    content_prompt: str,
    style_prompt: str,
    cfg: ModelConfig = ModelConfig(),
    seed: int = 0,
    *,
    plan_overrides: Optional[dict] = None,
    retain_packets: bool = False,
) -> tuple[Image, TraceBundle]:
    """Personalization from a style prompt alone: no image, no feature init."""
    model = init_model(cfg)
    plan = merge_plan(default_plan(cfg.schedule), plan_overrides)
    plan = dc_replace(plan, feature_init=False)
    prompts = {
        "content": content_prompt,
        "style": style_prompt,
        "generation": build_gen_prompt(content_prompt, style_prompt),
    }
    texts = {k: encode_prompt(v, cfg.d_text) for k, v in prompts.items()}
    paths = run_lockstep(
        model, texts, plan, seed, None, retain_packets=retain_packets
    )
    image = decode(paths.generation.trace.final_feature, model)
    bundle = TraceBundle(
        traces={p.name: p.trace for p in paths.all()},
        plan=plan,
        cfg=cfg,
        seed=seed,
        prompts=prompts,
    )
    return image, bundle


def baseline_generate(
    prompt: str,
    cfg: ModelConfig = ModelConfig(),
    seed: int = 0,
    *,
    plan: Optional[InterventionPlan] = None,
    retain_packets: bool = False,
    sources: Optional[dict] = None,
) -> tuple[Image, GenerationTrace]:
    """Single-path generation with no cross-path sharing."""
    if not prompt:
        raise ValueError("prompt must be non-empty")
    model = init_model(cfg)
    text = encode_prompt(prompt, cfg.d_text)
    trace = generate(
        model,
        text,
        plan,
        path_stream(seed, "generation"),
        retain_packets=retain_packets,
        sources=sources,
    )
    return decode(trace.final_feature, model), trace
