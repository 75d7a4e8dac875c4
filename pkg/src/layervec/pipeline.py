"""End-to-end vectorization driver used by the CLI.

Wires the stages together: sequence -> masks -> dedup -> layers ->
structure init -> Stage I -> color fit -> Stage II -> artifacts. Every run
writes its resolved configuration to run.json so results are reproducible
from the output directory alone.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from .errors import ValidationError
from .image import Image, load_png, save_png
from .layering import build_layers, save_layers
from .masks import MaskSet, builtin_segment, dedup_across_levels, import_masks, save_masks
from .optim import (AdamState, BudgetPlan, LossLog, StructureLossConfig,
                    apply_pair_colors, assign_pair_colors, build_layer_targets,
                    fit_colors, init_structure_paths, run_stage1, run_stage2)
from .render import render
from .scene import Scene, UidAllocator
from .simplify import SimplificationSequence, load_sequence
from .svgio import export_svg, save_scene_json

DEFAULT_BACKGROUND = np.ones(3)  # white canvas behind the vector stack


@dataclass(frozen=True)
class VectorizeConfig:
    target: str
    out_dir: str
    sequence: str | None = None
    masks: str | None = None
    segment: str | None = None       # "builtin" enables the fallback segmenter
    paths_budget: int = 128
    seed: int = 0
    no_sequence: bool = False
    no_overlap_loss: bool = False
    no_structure_opt: bool = False
    color_fit: str = "dominant"
    stage1_iters: int = 500
    stage2_iters: int = 500
    threads: int = 1
    overlap_slack: int = 0
    min_area: int = 64
    dp_epsilon: float = 5.0
    diff_threshold: float = 0.1

    def __post_init__(self):
        if self.paths_budget < 1:
            raise ValidationError("path budget must be >= 1")
        if self.color_fit not in ("dominant", "mse"):
            raise ValidationError("color fit must be dominant or mse")
        if self.threads < 1:
            raise ValidationError("thread count must be >= 1")


@dataclass
class RunResult:
    scene: Scene
    out_dir: str
    structure_count: int
    warnings: list[str] = field(default_factory=list)


def as_rgb(img: Image) -> Image:
    """Normalize any loaded image to 3 channels; alpha composites over white."""
    if img.channels == 3:
        return img
    if img.channels == 1:
        return Image(np.repeat(img.data, 3, axis=2))
    rgb, alpha = img.data[:, :, :3], img.data[:, :, 3:4]
    return Image(rgb * alpha + (1.0 - alpha))


def _resolve_sequence(cfg: VectorizeConfig, target: Image) -> SimplificationSequence:
    if cfg.sequence:
        seq = load_sequence(cfg.sequence)
        if seq.levels[0].data.shape[:2] != target.data.shape[:2]:
            raise ValidationError("sequence dimensions do not match the target")
    else:
        seq = SimplificationSequence(levels=(target,), method="none")
    if cfg.no_sequence and len(seq) > 1:
        seq = SimplificationSequence(levels=(seq.levels[0],), method=seq.method,
                                     params=(seq.params[0],))
    return seq


def _resolve_masks(cfg: VectorizeConfig, seq: SimplificationSequence,
                   target: Image) -> MaskSet:
    if cfg.masks:
        ms = import_masks(cfg.masks)
        for m in ms.masks:
            if m.bits.shape != target.data.shape[:2]:
                raise ValidationError(f"mask {m.id} does not match the target size")
        return ms
    if cfg.segment == "builtin":
        masks = []
        for k, level in enumerate(seq.levels):
            masks.extend(builtin_segment(as_rgb(level), cfg.min_area, level=k))
        return MaskSet(masks=tuple(masks), source="builtin")
    raise ValidationError("no masks available: pass --masks or --segment builtin")


def run_vectorize(cfg: VectorizeConfig) -> RunResult:
    os.makedirs(cfg.out_dir, exist_ok=True)
    target = as_rgb(load_png(cfg.target))
    h, w = target.height, target.width

    seq = _resolve_sequence(cfg, target)
    ms = dedup_across_levels(_resolve_masks(cfg, seq, target))
    ls = build_layers(ms, cfg.overlap_slack)
    save_layers(ls, os.path.join(cfg.out_dir, "layers.json"))
    if ms.source == "builtin" and ms.masks:
        save_masks(ms, os.path.join(cfg.out_dir, "masks"))

    plan = BudgetPlan(total_paths=cfg.paths_budget, stage1_iters=cfg.stage1_iters,
                      stage2_iters=cfg.stage2_iters)
    uids = UidAllocator()
    scene, warnings = init_structure_paths(
        ls, ms, w, h, DEFAULT_BACKGROUND, dp_epsilon=cfg.dp_epsilon,
        cap=plan.structure_cap, uids=uids)
    warnings = list(ms.warnings) + warnings
    structure_count = len(scene.paths)

    colors = assign_pair_colors(ls, cfg.seed)
    scene = apply_pair_colors(scene, colors)
    targets = build_layer_targets(ms, ls, colors, h, w)

    log = LossLog()
    adam = AdamState()
    loss_cfg = StructureLossConfig(w2=0.0 if cfg.no_overlap_loss else 1e-8)
    stage1_ran = not cfg.no_structure_opt and cfg.stage1_iters > 0
    if stage1_ran:
        scene = run_stage1(scene, targets, adam, loss_cfg, iters=cfg.stage1_iters,
                           threads=cfg.threads, log=log)
    save_scene_json(scene, os.path.join(cfg.out_dir, "scene_stage1.json"))

    scene = fit_colors(scene, target, cfg.color_fit, adam=adam, threads=cfg.threads)
    scene = run_stage2(scene, target, adam, plan, dp_epsilon=cfg.dp_epsilon,
                       diff_threshold=cfg.diff_threshold, threads=cfg.threads,
                       uids=uids, log=log,
                       start_iter=cfg.stage1_iters if stage1_ran else 0)
    scene.validate()

    save_scene_json(scene, os.path.join(cfg.out_dir, "scene_final.json"))
    export_svg(scene, os.path.join(cfg.out_dir, "final.svg"))
    save_png(render(scene, threads=cfg.threads), os.path.join(cfg.out_dir, "render.png"))
    log.save(os.path.join(cfg.out_dir, "loss.csv"))
    run_doc = {
        "version": __version__,
        "config": asdict(cfg),
        "structure_paths": structure_count,
        "total_paths": len(scene.paths),
        "layer_count": len(ls),
        "mask_count": len(ms),
        "nonfinite_gradients_skipped": adam.nonfinite_skipped,
        "warnings": warnings,
    }
    with open(os.path.join(cfg.out_dir, "run.json"), "w") as fh:
        json.dump(run_doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return RunResult(scene=scene, out_dir=cfg.out_dir,
                     structure_count=structure_count, warnings=warnings)
