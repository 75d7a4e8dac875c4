"""Command line entry points.

Subcommands:
    simplify   build a progressive simplification sequence from one image
    vectorize  run the full two-stage vectorization pipeline
    render     rasterize a saved scene to PNG
    layers     write cumulative back-to-front renders, one per layer
    metrics    report reconstruction MSE and shape compactness for a scene

Exit codes: 0 on success, 2 on invalid input, 3 when the optimizer diverges.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .errors import DivergenceError, LayervecError
from .image import load_png, save_png
from .masks import import_masks
from .metrics import mse, vec_compactness
from .pipeline import VectorizeConfig, as_rgb, run_vectorize
from .render import render
from .scene import BezierPath, Scene
from .simplify import (bilateral_sequence, gaussian_sequence, save_sequence,
                       slic_sequence)
from .svgio import load_scene_json

_SEQUENCE_BUILDERS = {
    "gaussian": gaussian_sequence,
    "bilateral": bilateral_sequence,
    "slic": slic_sequence,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="layervec")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simplify", help="build a progressive simplification sequence")
    p.add_argument("--in", dest="input", required=True, help="source PNG")
    p.add_argument("--method", choices=sorted(_SEQUENCE_BUILDERS), default="gaussian")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("vectorize", help="vectorize an image into layered paths")
    p.add_argument("--target", help="target PNG (ignored with --batch)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--sequence", help="simplification sequence directory or manifest")
    p.add_argument("--masks", help="mask manifest (masks.json)")
    p.add_argument("--segment", choices=["builtin"],
                   help="segment each level with the builtin color quantizer")
    p.add_argument("--paths", type=int, default=128, help="total path budget")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-sequence", action="store_true",
                   help="use only level 0 of the sequence")
    p.add_argument("--no-overlap-loss", action="store_true",
                   help="drop the within-layer overlap penalty")
    p.add_argument("--no-structure-opt", action="store_true",
                   help="skip geometry refinement of the structure paths")
    p.add_argument("--color-fit", choices=["dominant", "mse"], default="dominant")
    p.add_argument("--min-area", type=int, default=64,
                   help="builtin segmentation: smallest region kept, in pixels")
    p.add_argument("--overlap-slack", type=int, default=0,
                   help="shared pixels tolerated within a layer")
    p.add_argument("--stage1-iters", type=int, default=500)
    p.add_argument("--stage2-iters", type=int, default=500)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--batch", help="text file listing one target PNG per line")

    p = sub.add_parser("render", help="rasterize a scene JSON or SVG to PNG")
    p.add_argument("--scene", required=True)
    p.add_argument("--out", required=True, help="output PNG path")
    p.add_argument("--scale", type=int, default=1, help="integer supersampling factor")

    p = sub.add_parser("layers", help="write cumulative per-layer renders")
    p.add_argument("--scene", required=True)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("metrics", help="score a scene against a target image")
    p.add_argument("--scene", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--masks", help="mask manifest for compactness scoring")
    p.add_argument("--out", help="also write the JSON report here")
    return parser


def _load_scene(path: str) -> Scene:
    if path.endswith(".svg"):
        from .svgio import import_svg
        return import_svg(path)
    return load_scene_json(path)


def _cmd_simplify(args) -> int:
    img = as_rgb(load_png(args.input))
    seq = _SEQUENCE_BUILDERS[args.method](img)
    manifest = save_sequence(seq, args.out)
    print(manifest)
    return 0


def _scaled(scene: Scene, k: int) -> Scene:
    if k == 1:
        return scene
    paths = tuple(
        BezierPath(points=p.points * k, fill=p.fill, layer=p.layer, kind=p.kind,
                   uid=p.uid, frozen=p.frozen, source_mask_id=p.source_mask_id)
        for p in scene.paths)
    return Scene(width=scene.width * k, height=scene.height * k,
                 background=scene.background, paths=paths)


def _cmd_render(args) -> int:
    if args.scale < 1:
        print("error: --scale must be >= 1", file=sys.stderr)
        return 2
    scene = _scaled(_load_scene(args.scene), args.scale)
    save_png(render(scene), args.out)
    print(args.out)
    return 0


def _cmd_layers(args) -> int:
    scene = _load_scene(args.scene)
    os.makedirs(args.out, exist_ok=True)
    levels = sorted({p.layer for p in scene.paths})
    if not levels:
        levels = [0]
    for j in levels:
        partial = scene.with_paths(tuple(p for p in scene.paths if p.layer <= j))
        out = os.path.join(args.out, f"layer_{j:02d}.png")
        save_png(render(partial), out)
        print(out)
    return 0


def _cmd_metrics(args) -> int:
    scene = _load_scene(args.scene)
    target = as_rgb(load_png(args.target))
    report = {"mse": mse(render(scene), target)}
    if args.masks:
        ms = import_masks(args.masks)
        report["compactness"] = vec_compactness(scene, ms.masks).to_json()
    text = json.dumps(report, indent=2, sort_keys=True)
    print(text)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    return 0


def _vectorize_config(args, target: str, out_dir: str) -> VectorizeConfig:
    return VectorizeConfig(
        target=target, out_dir=out_dir, sequence=args.sequence, masks=args.masks,
        segment=args.segment, paths_budget=args.paths, seed=args.seed,
        no_sequence=args.no_sequence, no_overlap_loss=args.no_overlap_loss,
        no_structure_opt=args.no_structure_opt, color_fit=args.color_fit,
        stage1_iters=args.stage1_iters, stage2_iters=args.stage2_iters,
        threads=args.threads, overlap_slack=args.overlap_slack,
        min_area=args.min_area)


def _cmd_vectorize(args) -> int:
    if args.batch:
        with open(args.batch) as fh:
            targets = [line.strip() for line in fh if line.strip()]
        if not targets:
            print("error: batch file lists no targets", file=sys.stderr)
            return 2
        for tgt in targets:
            stem = os.path.splitext(os.path.basename(tgt))[0]
            result = run_vectorize(_vectorize_config(args, tgt, os.path.join(args.out, stem)))
            for note in result.warnings:
                print(f"warning: {note}", file=sys.stderr)
            print(result.out_dir)
        return 0
    if not args.target:
        print("error: pass --target or --batch", file=sys.stderr)
        return 2
    result = run_vectorize(_vectorize_config(args, args.target, args.out))
    for note in result.warnings:
        print(f"warning: {note}", file=sys.stderr)
    print(result.out_dir)
    return 0


_COMMANDS = {
    "simplify": _cmd_simplify,
    "vectorize": _cmd_vectorize,
    "render": _cmd_render,
    "layers": _cmd_layers,
    "metrics": _cmd_metrics,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (LayervecError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
