"""Single command-line entry point for the whole pipeline.

Exit codes: 0 success, 1 usage error, 2 data error, 3 runtime/numeric
error, 4 assertion-flag threshold failure (eval --assert-ratio,
bench --assert-budget).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError
from .evaluate import compare_checkpoints, single_arm_probe
from .guard import LatencyBudget, SafeRegion, guard_run, make_segmenter, time_inference
from .nets import DiscriminatorConfig, UNetConfig
from .pipeline import (DatasetManifest, ImageBuffer, NetpbmError, SceneConfig,
                       build_manifest, load_manifest, synth_dataset, write_netpbm)
from .tensor import NonFiniteError, ShapeError, Tensor
from .train import TrainConfig, load_checkpoint, train

USAGE_EXIT = 1
DATA_EXIT = 2
RUNTIME_EXIT = 3
ASSERT_EXIT = 4


class ConfigError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(USAGE_EXIT)


_SECTIONS = {
    "scene": SceneConfig,
    "train": TrainConfig,
    "generator": UNetConfig,
    "discriminator": DiscriminatorConfig,
    "budget": LatencyBudget,
    "region": None,  # validated separately
}

_REGION_KEYS = {"permitted_rect", "breach_fraction_threshold",
                "consecutive_frames_to_override"}


def load_config(path: str | None) -> dict:
    """Strict JSON config: unknown sections or keys are rejected."""
    if path is None:
        return {}
    doc = json.loads(Path(path).read_text())
    if not isinstance(doc, dict):
        raise ConfigError(f"config {path}: top level must be an object")
    for section, body in doc.items():
        if section not in _SECTIONS:
            raise ConfigError(f"config {path}: unknown section '{section}'")
        if not isinstance(body, dict):
            raise ConfigError(f"config {path}: section '{section}' must be an object")
        cls = _SECTIONS[section]
        allowed = (_REGION_KEYS if cls is None
                   else {f.name for f in dataclasses.fields(cls)})
        for key in body:
            if key not in allowed:
                raise ConfigError(f"config {path}: unknown key '{key}' in '{section}'")
    return doc


def _section(config: dict, name: str, cls, **overrides):
    body = dict(config.get(name, {}))
    body.update({k: v for k, v in overrides.items() if v is not None})
    for key in ("segment_length_range", "arm_width_range"):
        if key in body and isinstance(body[key], list):
            body[key] = tuple(body[key])
    return cls(**body)


def _region(config: dict, shape: tuple[int, int]) -> SafeRegion:
    body = config.get("region", {})
    h, w = shape
    mask = np.zeros((h, w), dtype=np.uint8)
    x0, y0, x1, y1 = body.get("permitted_rect", [0, 0, w, h])
    mask[y0:y1, x0:x1] = 255
    return SafeRegion(
        mask=ImageBuffer(mask),
        breach_fraction_threshold=body.get("breach_fraction_threshold", 0.01),
        consecutive_frames_to_override=body.get("consecutive_frames_to_override", 2))


def _gen_cfg(config: dict) -> UNetConfig:
    return _section(config, "generator", UNetConfig)


def cmd_synth(args) -> int:
    config = load_config(args.config)
    scene = _section(config, "scene", SceneConfig, seed=args.seed)
    manifest = synth_dataset(scene, args.count, args.out, fmt=args.format,
                             start_index=args.start)
    print(f"synth: wrote {manifest.count} pairs to {args.out}")
    return 0


def cmd_prepare(args) -> int:
    manifest = build_manifest(args.dir, pattern=args.pattern, fmt=args.format)
    path = manifest.save()
    print(f"prepare: manifest with {manifest.count} entries at {path}")
    return 0


def cmd_train(args) -> int:
    config = load_config(args.config)
    cfg = _section(config, "train", TrainConfig, manifest_path=args.manifest,
                   output_dir=args.out, seed=args.seed, epochs=args.epochs)
    gen_cfg = _gen_cfg(config)
    disc_cfg = _section(config, "discriminator", DiscriminatorConfig,
                        in_channels=gen_cfg.in_channels + gen_cfg.out_channels)
    ckpts, records = train(cfg, gen_cfg, disc_cfg, resume_from=args.resume,
                           progress=not args.quiet)
    print(f"train: {len(records)} epochs, {len(ckpts)} checkpoints in {cfg.output_dir}")
    return 0


def cmd_infer(args) -> int:
    config = load_config(args.config)
    gen, *_ = load_checkpoint(args.ckpt, _gen_cfg(config))
    manifest = load_manifest(args.manifest)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for i, (cond, _label) in enumerate(manifest.load_pairs_unit_interval()):
        out = gen.forward(Tensor(cond[None]), mode="infer")
        values = np.clip(np.rint(out.data[0, 0] * 255.0), 0, 255).astype(np.uint8)
        write_netpbm(ImageBuffer(values), out_dir / f"pred_{i:05d}.pgm")
    print(f"infer: wrote {manifest.count} predictions to {out_dir}")
    return 0


def cmd_eval(args) -> int:
    config = load_config(args.config)
    manifest = load_manifest(args.manifest)
    report = compare_checkpoints(args.ckpt_baseline, args.ckpt, manifest,
                                 _gen_cfg(config), out_dir=args.out)
    summary = report.summary()
    print(json.dumps(summary, indent=2))
    if args.assert_ratio is not None and report.improvement_ratio < args.assert_ratio:
        print(f"eval: improvement ratio {report.improvement_ratio:.3f} "
              f"below required {args.assert_ratio}", file=sys.stderr)
        return ASSERT_EXIT
    return 0


def cmd_probe_single_arm(args) -> int:
    config = load_config(args.config)
    scene = _section(config, "scene", SceneConfig, seed=args.seed)
    scene = dataclasses.replace(scene, arm_count=1)
    report = single_arm_probe(args.ckpt, scene, args.count, _gen_cfg(config),
                              out_dir=args.out)
    print(json.dumps(report.summary(), indent=2))
    return 0


def cmd_bench(args) -> int:
    config = load_config(args.config)
    budget = _section(config, "budget", LatencyBudget, budget_ms=args.budget_ms)
    manifest = load_manifest(args.manifest)
    report = time_inference(args.ckpt, manifest, _gen_cfg(config), budget,
                            repetitions=args.repetitions,
                            injected_delay_ms=args.delay_ms)
    if args.out:
        report.write(args.out)
    print(json.dumps(report.summary(), indent=2))
    if args.assert_budget and report.violations > 0:
        print(f"bench: {report.violations} frames over the "
              f"{budget.budget_ms} ms budget", file=sys.stderr)
        return ASSERT_EXIT
    return 0


def cmd_guard(args) -> int:
    config = load_config(args.config)
    budget = _section(config, "budget", LatencyBudget, budget_ms=args.budget_ms)
    manifest = load_manifest(args.manifest)
    pairs = manifest.load_pairs_unit_interval()
    if not pairs:
        raise ValueError("guard: empty manifest")
    h, w = pairs[0][0].shape[1:]
    region = _region(config, (h, w))
    segmenter = make_segmenter(args.ckpt, _gen_cfg(config))
    events = guard_run(segmenter, (c for c, _ in pairs), region, budget,
                       log_path=args.out)
    halts = sum(1 for e in events if e.decision == "HALT")
    print(f"guard: {len(events)} frames, {halts} HALT events, log at {args.out}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="armsentinel",
                     description="cGAN arm-segmentation safety stack")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        p = sub.add_parser(name, help=help_)
        p.set_defaults(fn=fn)
        p.add_argument("--config", default=None, help="JSON run config")
        return p

    p = add("synth", cmd_synth, "generate a synthetic paired dataset")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--start", type=int, default=0, help="first frame index")
    p.add_argument("--format", choices=["paired-files", "stitched"],
                   default="paired-files")
    p.add_argument("--out", required=True)

    p = add("prepare", cmd_prepare, "scan a frame directory into a manifest")
    p.add_argument("--dir", required=True)
    p.add_argument("--pattern", default="frame_*.p?m")
    p.add_argument("--format", choices=["paired-files", "stitched"],
                   default="paired-files")

    p = add("train", cmd_train, "adversarial training run")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--resume", default=None, help="checkpoint to resume from")
    p.add_argument("--quiet", action="store_true")

    p = add("infer", cmd_infer, "write predicted masks for a manifest")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)

    p = add("eval", cmd_eval, "compare baseline vs trained checkpoint")
    p.add_argument("--ckpt-baseline", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--assert-ratio", type=float, default=None,
                   help="exit 4 if improvement ratio is below this")

    p = add("probe-single-arm", cmd_probe_single_arm,
            "evaluate a checkpoint on single-arm scenes")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--count", type=int, default=20)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)

    p = add("bench", cmd_bench, "time inference against the latency budget")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--budget-ms", type=float, default=None)
    p.add_argument("--repetitions", type=int, default=1)
    p.add_argument("--delay-ms", type=float, default=0.0,
                   help="test hook: inject synthetic per-frame delay")
    p.add_argument("--out", default=None)
    p.add_argument("--assert-budget", action="store_true",
                   help="exit 4 on any budget violation")

    p = add("guard", cmd_guard, "run the safety interlock over a frame source")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--budget-ms", type=float, default=None)
    p.add_argument("--out", default="guard_events.jsonl")

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, NetpbmError, CheckpointError, FileNotFoundError,
            ShapeError, ValueError, json.JSONDecodeError) as exc:
        print(f"armsentinel {args.command}: data error: {exc}", file=sys.stderr)
        return DATA_EXIT
    except (NonFiniteError, ArithmeticError, RuntimeError) as exc:
        print(f"armsentinel {args.command}: runtime error: {exc}", file=sys.stderr)
        return RUNTIME_EXIT


if __name__ == "__main__":
    sys.exit(main())
