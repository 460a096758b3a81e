"""Command-line frontend.

Every command resolves its configuration from defaults, an optional
--config JSON file, and explicit flags (highest precedence), then echoes
the fully resolved config into the output directory. Re-running a
command from its echoed config reproduces every artifact byte for byte.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .analysis import emit_report, qkv_swap_study, stepwise_influence
from .codec import FormatError, write_ppm
from .model import ModelConfig
from .pipeline import PersonalizationRequest, baseline_generate, personalize
from .util import array_checksum, config_hash


def _load_config_file(path: str, command: str, parser) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        parser.error(f"cannot read config file: {exc}")
    except json.JSONDecodeError as exc:
        parser.error(f"config file is not valid JSON: {exc}")
    if not isinstance(data, dict):
        parser.error("config file must hold a JSON object")
    if "command" in data and data["command"] != command:
        parser.error(
            f"config file is for command {data['command']!r}, not {command!r}"
        )
    return data


def _resolve(args, parser, command: str, fields: dict) -> dict:
    """defaults <- config file <- explicit flags, then require the musts."""
    resolved = {name: default for name, (default, _required) in fields.items()}
    resolved["model"] = None
    resolved["plan"] = {}
    if args.config:
        file_cfg = _load_config_file(args.config, command, parser)
        for key in list(fields) + ["model", "plan"]:
            if key in file_cfg:
                resolved[key] = file_cfg[key]
    for name in fields:
        value = getattr(args, name.replace("-", "_"), None)
        if value is not None:
            resolved[name] = value
    for name, (_default, required) in fields.items():
        if required and resolved[name] is None:
            parser.error(f"--{name.replace('_', '-')} is required")
    return resolved


def _model_config(resolved: dict, parser) -> ModelConfig:
    try:
        if resolved.get("model"):
            return ModelConfig.from_dict(resolved["model"])
        return ModelConfig()
    except (KeyError, TypeError, ValueError) as exc:
        parser.error(f"bad model config: {exc}")


def _echo_config(out_dir: Path, payload: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n"
    )


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _trace_json(trace, prompt: str, seed: int, cfg: ModelConfig, run_cfg: dict) -> dict:
    return {
        "config_hash": config_hash(run_cfg),
        "prompt": prompt,
        "seed": seed,
        "schedule": cfg.schedule.to_dict(),
        "steps": [
            {"step": s, "resolution": list(cfg.schedule.steps[s - 1])}
            | trace.step_checksums(s)
            for s in range(1, cfg.schedule.num_steps + 1)
        ],
        "hooks": trace.hook_log,
    }


def cmd_generate(args, parser) -> int:
    fields = {"prompt": (None, True), "seed": (0, False), "out_dir": ("out", False)}
    resolved = _resolve(args, parser, "generate", fields)
    cfg = _model_config(resolved, parser)
    out_dir = Path(resolved["out_dir"])
    run_cfg = {
        "command": "generate",
        "prompt": resolved["prompt"],
        "seed": int(resolved["seed"]),
        "out_dir": str(resolved["out_dir"]),
        "model": cfg.to_dict(),
    }
    image, trace = baseline_generate(resolved["prompt"], cfg, int(resolved["seed"]))
    _echo_config(out_dir, run_cfg)
    write_ppm(image, out_dir / "baseline.ppm")
    payload = _trace_json(trace, resolved["prompt"], int(resolved["seed"]), cfg, run_cfg)
    payload["image_checksum"] = array_checksum(image.pixels)
    _write_json(out_dir / "trace.json", payload)
    return 0


def cmd_personalize(args, parser) -> int:
    fields = {
        "content": (None, True),
        "style_text": (None, True),
        "style_image": (None, True),
        "seed": (0, False),
        "out_dir": ("out", False),
    }
    resolved = _resolve(args, parser, "personalize", fields)
    cfg = _model_config(resolved, parser)

    plan_overrides = dict(resolved.get("plan") or {})
    if args.no_init:
        plan_overrides["feature_init"] = False
    if args.no_ksas:
        plan_overrides["ksas"] = False
    if args.no_aqs and args.alpha is not None:
        parser.error("--no-aqs and --alpha are mutually exclusive")
    if args.no_aqs:
        plan_overrides["aqs"] = False
        plan_overrides["alpha_override"] = None
    if args.alpha is not None:
        if not 0.0 <= args.alpha <= 1.0:
            parser.error("--alpha must lie in [0, 1]")
        plan_overrides["aqs"] = True
        plan_overrides["alpha_override"] = args.alpha

    out_dir = Path(resolved["out_dir"])
    run_cfg = {
        "command": "personalize",
        "content": resolved["content"],
        "style_text": resolved["style_text"],
        "style_image": str(resolved["style_image"]),
        "seed": int(resolved["seed"]),
        "out_dir": str(resolved["out_dir"]),
        "model": cfg.to_dict(),
        "plan": plan_overrides,
    }
    req = PersonalizationRequest(
        content_prompt=resolved["content"],
        style_prompt=resolved["style_text"],
        style_image_path=str(resolved["style_image"]),
        seed=int(resolved["seed"]),
        cfg=cfg,
        plan_overrides=plan_overrides,
    )
    image, bundle = personalize(req)
    _echo_config(out_dir, run_cfg)
    write_ppm(image, out_dir / "personalized.ppm")
    payload = bundle.report()
    payload["config_hash"] = config_hash(run_cfg)
    payload["image_checksum"] = array_checksum(image.pixels)
    _write_json(out_dir / "bundle.json", payload)
    return 0


def _cmd_analyze(args, parser, mode: str) -> int:
    fields = {
        "prompt": (None, True),
        "alt_prompt": (None, True),
        "seed": (0, False),
        "out_dir": ("out", False),
    }
    resolved = _resolve(args, parser, f"analyze-{mode}", fields)
    cfg = _model_config(resolved, parser)
    out_dir = Path(resolved["out_dir"])
    run_cfg = {
        "command": f"analyze-{mode}",
        "prompt": resolved["prompt"],
        "alt_prompt": resolved["alt_prompt"],
        "seed": int(resolved["seed"]),
        "out_dir": str(resolved["out_dir"]),
        "model": cfg.to_dict(),
    }
    _echo_config(out_dir, run_cfg)
    if mode == "inject":
        curve = stepwise_influence(
            resolved["prompt"], resolved["alt_prompt"], cfg, int(resolved["seed"])
        )
        emit_report(curve, out_dir / "curve.json")
    else:
        report = qkv_swap_study(
            resolved["prompt"], resolved["alt_prompt"], cfg, int(resolved["seed"])
        )
        emit_report(report, out_dir / "swap_report.json")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scalewise",
        description="Deterministic scale-wise text-to-image engine with "
        "training-free style personalization.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--seed", type=int, default=None, help="generation seed")
        p.add_argument("-o", "--out-dir", default=None, help="output directory")
        p.add_argument("--config", default=None, help="JSON run config file")

    p_gen = sub.add_parser("generate", help="single-path baseline generation")
    p_gen.add_argument("--prompt", default=None, help="text prompt")
    add_common(p_gen)
    p_gen.set_defaults(func=cmd_generate)

    p_per = sub.add_parser("personalize", help="three-path style personalization")
    p_per.add_argument("--content", default=None, help="content prompt")
    p_per.add_argument("--style-text", default=None, help="style prompt")
    p_per.add_argument("--style-image", default=None, help="reference image (PPM)")
    p_per.add_argument("--no-init", action="store_true", help="disable feature initialization")
    p_per.add_argument("--no-ksas", action="store_true", help="disable key-stage attention sharing")
    p_per.add_argument("--no-aqs", action="store_true", help="disable adaptive query sharing")
    p_per.add_argument("--alpha", type=float, default=None, help="fixed query blend weight in [0, 1]")
    add_common(p_per)
    p_per.set_defaults(func=cmd_personalize)

    p_ana = sub.add_parser("analyze", help="diagnostic studies")
    ana_sub = p_ana.add_subparsers(dest="analyze_mode", required=True)
    for mode, help_text in (
        ("inject", "step-wise prompt injection influence curve"),
        ("swap", "Q/K/V feature replacement study"),
    ):
        p = ana_sub.add_parser(mode, help=help_text)
        p.add_argument("--prompt", default=None, help="base prompt")
        p.add_argument("--alt-prompt", default=None, help="alternative prompt")
        add_common(p)
        p.set_defaults(func=lambda a, pr, m=mode: _cmd_analyze(a, pr, m))

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args, parser)
    except (ValueError, OSError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entry() -> None:
    sys.exit(main())
