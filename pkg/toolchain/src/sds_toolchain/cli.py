"""Command-line entry points: sds-simplify, sds-export-masks, sds-neural-metrics."""

from __future__ import annotations

import argparse
import json
import sys

from .errors import ToolchainError
from .metrics import metrics_to_json, neural_metrics
from .sam_export import export_sam_masks
from .sds import SDSConfig, SmoothingStub, sds_simplify


def _fail(parser: argparse.ArgumentParser, message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return 2


def main_simplify(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="sds-simplify",
        description="Produce a progressively simplified image sequence.")
    parser.add_argument("--in", dest="image", required=True, help="input PNG")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--iterations", type=int, default=80)
    parser.add_argument("--interval", type=int, default=20,
                        help="snapshot every this many steps")
    parser.add_argument("--prompt", default="",
                        help="guidance text; leave empty to mute guidance")
    parser.add_argument("--cfg-scale", type=float, default=7.5,
                        help="guidance strength; 0 is the other muting mode")
    parser.add_argument("--t-min", type=int, default=50)
    parser.add_argument("--t-max", type=int, default=950)
    parser.add_argument("--step-size", type=float, default=0.25)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--backend", choices=["diffusion", "stub"],
                        default="diffusion",
                        help="'stub' runs a model-free smoothing predictor")
    args = parser.parse_args(argv)
    try:
        cfg = SDSConfig(iterations=args.iterations, snapshot_interval=args.interval,
                        prompt=args.prompt, cfg_scale=args.cfg_scale,
                        t_min=args.t_min, t_max=args.t_max,
                        step_size=args.step_size, seed=args.seed)
        predictor = SmoothingStub() if args.backend == "stub" else None
        manifest = sds_simplify(args.image, cfg, args.out, predictor=predictor)
    except (ToolchainError, OSError) as exc:
        return _fail(parser, str(exc))
    print(manifest)
    return 0


def main_export_masks(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="sds-export-masks",
        description="Segment an image and export binary masks plus manifest.")
    parser.add_argument("--in", dest="image", required=True, help="input PNG")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--level", type=int, default=None,
                        help="level tag; defaults to the input filename's level")
    parser.add_argument("--checkpoint", required=True, help="SAM checkpoint path")
    parser.add_argument("--model-type", default="vit_h")
    args = parser.parse_args(argv)
    try:
        manifest = export_sam_masks(args.image, args.out, level=args.level,
                                    checkpoint=args.checkpoint,
                                    model_type=args.model_type)
    except (ToolchainError, OSError) as exc:
        return _fail(parser, str(exc))
    print(manifest)
    return 0


def main_neural_metrics(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="sds-neural-metrics",
        description="LPIPS and CLIP similarity between a render and its target.")
    parser.add_argument("--render", required=True)
    parser.add_argument("--target", required=True)
    parser.add_argument("--out", help="also write the JSON report here")
    args = parser.parse_args(argv)
    try:
        report = neural_metrics(args.render, args.target)
    except (ToolchainError, OSError) as exc:
        return _fail(parser, str(exc))
    text = metrics_to_json(report)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    print(json.dumps(report, sort_keys=True))
    return 0
