"""Diagnostic harness: step influence curves and Q/K/V swap studies.

stepwise_influence measures how much replacing the text conditioning at
a single step moves the final image and features; qkv_swap_study
re-generates one prompt's image with the other prompt's recorded Q, K
or V tensors. Both emit machine-readable JSON (plus CSV for curves)
stamped with a config hash so runs can be reproduced exactly.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .codec import Image, decode
from .interventions import InterventionPlan, QkvSwap, inject_prompt
from .model import ModelConfig, generate, init_model
from .pipeline import path_stream
from .textenc import encode_prompt
from .util import config_hash, thread_budget

# prompt-pair samples for the injection protocol: same object, two colors
SAMPLE_PROMPT_PAIRS = [
    ("A photo of a red truck", "A photo of a green truck"),
    ("A photo of a blue teapot", "A photo of a yellow teapot"),
    ("A photo of a black teddy bear", "A photo of a white teddy bear"),
    ("A photo of a purple chair", "A photo of an orange chair"),
    ("A photo of a green bicycle", "A photo of a pink bicycle"),
    ("A photo of a white boat", "A photo of a brown boat"),
    ("A photo of a yellow house", "A photo of a grey house"),
    ("A photo of an orange cat", "A photo of a black cat"),
    ("A photo of a pink cupcake", "A photo of a blue cupcake"),
    ("A photo of a brown dog", "A photo of a red dog"),
]


def image_distance(a: Image, b: Image) -> float:
    """Mean per-pixel Euclidean distance in normalized [0, 1] RGB."""
    if (a.height, a.width) != (b.height, b.width):
        raise ValueError("image dimensions differ")
    d = (a.pixels.astype(np.float64) - b.pixels.astype(np.float64)) / 255.0
    return float(np.mean(np.sqrt(np.sum(d * d, axis=-1))))


def _feature_distance(f_alt, f_base) -> float:
    base = f_base.data.astype(np.float64)
    diff = f_alt.data.astype(np.float64) - base
    denom = float(np.linalg.norm(base))
    if denom < 1e-12:
        return float(np.linalg.norm(diff))
    return float(np.linalg.norm(diff)) / denom


@dataclass(frozen=True)
class InfluenceCurve:
    """Per-step effect of injecting the alternative prompt at that step."""

    prompts: tuple[str, str]
    seed: int
    config_hash: str
    steps: tuple[int, ...]
    image_dist: tuple[float, ...]
    feature_dist: tuple[float, ...]


@dataclass(frozen=True)
class SwapEntry:
    component: str
    dist_vs_source: float
    dist_vs_target: float


@dataclass(frozen=True)
class SwapReport:
    """Distances after regenerating the target with each swapped component."""

    prompts: tuple[str, str]
    seed: int
    config_hash: str
    entries: tuple[SwapEntry, ...]


def _run_config(prompt: str, alt_prompt: str, cfg: ModelConfig, seed: int) -> dict:
    return {
        "prompt": prompt,
        "alt_prompt": alt_prompt,
        "model": cfg.to_dict(),
        "seed": int(seed),
    }


def stepwise_influence(
    prompt: str, alt_prompt: str, cfg: ModelConfig = ModelConfig(), seed: int = 0
) -> InfluenceCurve:
    """Inject alt_prompt at each step in turn and measure the shift.

    The baseline runs once; each injected run differs from it only in
    the conditioning of its single injected step. Injecting the base
    prompt itself reproduces the baseline bit for bit, giving an
    all-zero curve.
    """
    model = init_model(cfg)
    text = encode_prompt(prompt, cfg.d_text)
    text_alt = encode_prompt(alt_prompt, cfg.d_text)
    rng = path_stream(seed, "generation")
    base_trace = generate(model, text, None, rng)
    base_image = decode(base_trace.final_feature, model)
    base_feature = base_trace.final_feature

    def run(s: int) -> tuple[float, float]:
        plan = inject_prompt(InterventionPlan(), s, text_alt)
        trace = generate(model, text, plan, rng)
        img = decode(trace.final_feature, model)
        return (
            image_distance(img, base_image),
            _feature_distance(trace.final_feature, base_feature),
        )

    steps = list(range(1, cfg.schedule.num_steps + 1))
    workers = thread_budget()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, steps))
    else:
        results = [run(s) for s in steps]
    return InfluenceCurve(
        prompts=(prompt, alt_prompt),
        seed=int(seed),
        config_hash=config_hash(_run_config(prompt, alt_prompt, cfg, seed)),
        steps=tuple(steps),
        image_dist=tuple(r[0] for r in results),
        feature_dist=tuple(r[1] for r in results),
    )


def qkv_swap_study(
    prompt: str, alt_prompt: str, cfg: ModelConfig = ModelConfig(), seed: int = 0
) -> SwapReport:
    """Generate A and B, then regenerate B with each component from A."""
    model = init_model(cfg)
    text_a = encode_prompt(prompt, cfg.d_text)
    text_b = encode_prompt(alt_prompt, cfg.d_text)
    rng = path_stream(seed, "generation")
    trace_a = generate(model, text_a, None, rng, retain_packets=True)
    image_a = decode(trace_a.final_feature, model)
    trace_b = generate(model, text_b, None, rng)
    image_b = decode(trace_b.final_feature, model)

    entries = []
    for component in ("Q", "K", "V"):
        plan = InterventionPlan(qkv_swap=QkvSwap(component=component, source="A"))
        trace = generate(model, text_b, plan, rng, sources={"A": trace_a})
        img = decode(trace.final_feature, model)
        entries.append(
            SwapEntry(
                component=component,
                dist_vs_source=image_distance(img, image_a),
                dist_vs_target=image_distance(img, image_b),
            )
        )
    return SwapReport(
        prompts=(prompt, alt_prompt),
        seed=int(seed),
        config_hash=config_hash(_run_config(prompt, alt_prompt, cfg, seed)),
        entries=tuple(entries),
    )


def curve_to_dict(curve: InfluenceCurve) -> dict:
    return {
        "kind": "influence_curve",
        "prompts": {"base": curve.prompts[0], "alt": curve.prompts[1]},
        "seed": curve.seed,
        "config_hash": curve.config_hash,
        "steps": list(curve.steps),
        "image_dist": list(curve.image_dist),
        "feature_dist": list(curve.feature_dist),
    }


def curve_from_dict(d: dict) -> InfluenceCurve:
    return InfluenceCurve(
        prompts=(d["prompts"]["base"], d["prompts"]["alt"]),
        seed=d["seed"],
        config_hash=d["config_hash"],
        steps=tuple(d["steps"]),
        image_dist=tuple(d["image_dist"]),
        feature_dist=tuple(d["feature_dist"]),
    )


def swap_report_to_dict(report: SwapReport) -> dict:
    return {
        "kind": "swap_report",
        "prompts": {"base": report.prompts[0], "alt": report.prompts[1]},
        "seed": report.seed,
        "config_hash": report.config_hash,
        "entries": [
            {
                "component": e.component,
                "dist_vs_source": e.dist_vs_source,
                "dist_vs_target": e.dist_vs_target,
            }
            for e in report.entries
        ],
    }


def swap_report_from_dict(d: dict) -> SwapReport:
    return SwapReport(
        prompts=(d["prompts"]["base"], d["prompts"]["alt"]),
        seed=d["seed"],
        config_hash=d["config_hash"],
        entries=tuple(
            SwapEntry(e["component"], e["dist_vs_source"], e["dist_vs_target"])
            for e in d["entries"]
        ),
    )


def emit_report(obj, path) -> list[Path]:
    """Write a report as JSON; influence curves also get a CSV sibling.

    Returns the written paths. load_report() inverts the JSON exactly.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    written = [path]
    if isinstance(obj, InfluenceCurve):
        payload = curve_to_dict(obj)
        csv_path = path.with_suffix(".csv")
        with open(csv_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "image_dist", "feature_dist"])
            for s, di, df in zip(obj.steps, obj.image_dist, obj.feature_dist):
                writer.writerow([s, repr(di), repr(df)])
        written.append(csv_path)
    elif isinstance(obj, SwapReport):
        payload = swap_report_to_dict(obj)
    else:
        raise ValueError(f"cannot emit report for {type(obj).__name__}")
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return written


def load_report(path):
    d = json.loads(Path(path).read_text())
    if d.get("kind") == "influence_curve":
        return curve_from_dict(d)
    if d.get("kind") == "swap_report":
        return swap_report_from_dict(d)
    raise ValueError("unrecognized report file")
