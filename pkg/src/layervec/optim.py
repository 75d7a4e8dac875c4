"""Two-stage optimization: structural construction, color fitting, and
visual refinement, driven by a from-scratch Adam.

Stage I moves structure-path control points so each layer's rendering
matches that layer's mask target (painted in per-pair colors on black),
plus a within-layer overlap penalty computed from a gray re-render.
Stage II freezes structure, adds visual paths at the largest render-vs-
target difference regions, and optimizes their points and colors under
the plain squared-error fidelity loss.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (DegenerateShapeError, DivergenceError, EmptyMaskError,
                     ValidationError)
from .geometry import douglas_peucker, polyline_to_bezier, trace_boundary
from .image import BinaryMask, Image, abs_diff, connected_components
from .layering import LayerStack
from .masks import MaskSet, processing_order
from .render import RasterCache, RenderConfig, path_coverage_mask, render, render_with_grad
from .scene import MARGIN_FACTOR, BezierPath, Scene, UidAllocator

DP_EPSILON = 5.0
DIFF_THRESHOLD = 0.1
MIN_VISUAL_REGION_AREA = 16
CLEANUP_INTERVAL = 50
CLEANUP_MIN_AREA = 10
CLEANUP_CONTRIBUTION_TOL = 1e-5
DIVERGENCE_FACTOR = 10.0
DIVERGENCE_PATIENCE = 50

_BLACK = np.zeros(3)
_WHITE = np.ones(3)


# ---------------------------------------------------------------------------
# configuration types


@dataclass(frozen=True)
class StructureLossConfig:
    w1: float = 1.0
    w2: float = 1e-8
    overlap_opacity: float = 0.5
    theta: float = 0.4

    def __post_init__(self):
        if self.w1 < 0 or self.w2 < 0:
            raise ValidationError("loss weights must be >= 0")
        if not (0.0 < self.overlap_opacity < 1.0):
            raise ValidationError("overlap opacity must be in (0, 1)")
        if not (0.0 < self.theta < 1.0):
            raise ValidationError("transparency threshold must be in (0, 1)")


@dataclass(frozen=True)
class BudgetPlan:
    total_paths: int
    stage1_iters: int = 500
    stage2_iters: int = 500
    block_schedule: tuple[int, ...] = (8, 8, 16, 32, 64, 128)

    def __post_init__(self):
        if self.total_paths < 1:
            raise ValidationError("path budget must be >= 1")
        if self.stage1_iters < 0 or self.stage2_iters < 0:
            raise ValidationError("iteration counts must be >= 0")

    @property
    def structure_cap(self) -> int:
        return (self.total_paths + 1) // 2

    def visual_blocks(self, existing_paths: int) -> list[int]:
        remaining = self.total_paths - existing_paths
        blocks = []
        for b in self.block_schedule:
            if remaining <= 0:
                break
            take = min(b, remaining)
            blocks.append(take)
            remaining -= take
        return blocks


# ---------------------------------------------------------------------------
# Adam


class AdamState:
    """Bias-corrected Adam with per-tensor slots keyed by (uid, kind)."""

    def __init__(self, lr_points: float = 1.0, lr_colors: float = 0.01,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr_points = lr_points
        self.lr_colors = lr_colors
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.nonfinite_skipped = 0
        self._slots: dict = {}

    def slot(self, key, shape):
        s = self._slots.get(key)
        if s is None or s["m"].shape != tuple(shape):
            s = {"m": np.zeros(shape), "v": np.zeros(shape), "t": 0}
            self._slots[key] = s
        return s


def adam_step(state: AdamState, key, param: np.ndarray, grad: np.ndarray, *,
              lr: float, clamp: tuple[float, float] | None = None) -> np.ndarray:
    """One Adam update; entries with non-finite gradients are left untouched
    (and counted on the state)."""
    param = np.asarray(param, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if param.shape != grad.shape:
        raise ValidationError("parameter/gradient shape mismatch")
    slot = state.slot(key, param.shape)
    finite = np.isfinite(grad)
    n_bad = int(grad.size - np.count_nonzero(finite))
    if n_bad:
        state.nonfinite_skipped += n_bad
    slot["t"] += 1
    t = slot["t"]
    g = np.where(finite, grad, 0.0)
    slot["m"] = np.where(finite, state.beta1 * slot["m"] + (1 - state.beta1) * g, slot["m"])
    slot["v"] = np.where(finite, state.beta2 * slot["v"] + (1 - state.beta2) * g * g, slot["v"])
    m_hat = slot["m"] / (1.0 - state.beta1 ** t)
    v_hat = slot["v"] / (1.0 - state.beta2 ** t)
    new = np.where(finite, param - lr * m_hat / (np.sqrt(v_hat) + state.eps), param)
    if clamp is not None:
        new = np.clip(new, clamp[0], clamp[1])
    return new


# ---------------------------------------------------------------------------
# loss log


class LossLog:
    """Per-iteration loss rows; written as CSV with full-precision floats."""

    COLUMNS = ("stage", "iter", "loss_mse", "loss_overlap", "loss_fidelity", "loss_total")

    def __init__(self):
        self.rows: list[tuple] = []

    def add(self, stage: int, iteration: int, *, mse=None, overlap=None,
            fidelity=None, total=None) -> None:
        self.rows.append((stage, iteration, mse, overlap, fidelity, total))

    def save(self, path: str) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.COLUMNS)
            for row in self.rows:
                writer.writerow(["" if v is None else repr(v) if isinstance(v, float) else v
                                 for v in row])


class _DivergenceGuard:
    def __init__(self, initial: float, stage: str):
        self.limit = DIVERGENCE_FACTOR * initial
        self.stage = stage
        self.streak = 0

    def update(self, loss: float) -> None:
        if loss > self.limit:
            self.streak += 1
            if self.streak >= DIVERGENCE_PATIENCE:
                raise DivergenceError(
                    f"{self.stage}: loss {loss:.6g} exceeded 10x initial "
                    f"({self.limit:.6g}) for {self.streak} consecutive iterations")
        else:
            self.streak = 0


# ---------------------------------------------------------------------------
# structure initialization


def mask_to_path(bits: np.ndarray, dp_epsilon: float) -> np.ndarray:
    """Boundary trace -> simplification -> cubic control points, or raise."""
    region = BinaryMask(bits=np.asarray(bits, dtype=bool), level=0, id="region")
    poly = trace_boundary(region)
    simplified = douglas_peucker(poly, dp_epsilon)
    return polyline_to_bezier(simplified)


def init_structure_paths(ls: LayerStack, ms: MaskSet, width: int, height: int,
                         background: np.ndarray, *, dp_epsilon: float = DP_EPSILON,
                         cap: int | None = None,
                         uids: UidAllocator | None = None) -> tuple[Scene, list[str]]:
    """One structure path per admitted mask, ordered back-to-front.

    When the cap binds, masks are admitted most-simplified-level first, then
    by area descending. Masks whose simplified boundary degenerates below a
    triangle are skipped with a warning and do not consume budget.
    """
    uids = uids or UidAllocator()
    warnings: list[str] = []
    paths: list[BezierPath] = []
    for m in processing_order(ms.masks):
        if cap is not None and len(paths) >= cap:
            break
        try:
            points = mask_to_path(m.bits, dp_epsilon)
        except (DegenerateShapeError, EmptyMaskError) as exc:
            warnings.append(f"mask {m.id}: skipped ({exc})")
            continue
        paths.append(BezierPath(points=points, fill=np.array([0.0, 0.0, 0.0, 1.0]),
                                layer=ls.layer_of(m.id), kind="structure",
                                uid=uids.take(), source_mask_id=m.id))
    paths.sort(key=lambda p: p.layer)
    scene = Scene(width=width, height=height, background=background, paths=tuple(paths))
    scene.validate()
    return scene, warnings


_PALETTE_STEPS = (0.25, 0.5, 0.75, 1.0)


def pair_color_palette() -> np.ndarray:
    """The 64 RGB grid colors used for mask/path pair rendering; any two
    distinct entries are at least 0.25 apart."""
    grid = np.array(np.meshgrid(_PALETTE_STEPS, _PALETTE_STEPS, _PALETTE_STEPS,
                                indexing="ij"))
    return grid.reshape(3, -1).T.copy()


def assign_pair_colors(ls: LayerStack, seed: int) -> dict[str, np.ndarray]:
    """Seeded color per mask id, distinct within each layer (up to 64)."""
    palette = pair_color_palette()
    order = np.random.default_rng(seed).permutation(len(palette))
    colors: dict[str, np.ndarray] = {}
    for layer in ls.layers:
        for i, mask_id in enumerate(layer):
            colors[mask_id] = palette[order[i % len(palette)]]
    return colors


def build_layer_targets(ms: MaskSet, ls: LayerStack, colors: dict[str, np.ndarray],
                        height: int, width: int) -> list[np.ndarray]:
    """Per-layer target images: each mask painted opaquely in its pair color
    on black."""
    targets = []
    for layer in ls.layers:
        img = np.zeros((height, width, 3))
        for mask_id in layer:
            img[ms.by_id(mask_id).bits] = colors[mask_id]
        targets.append(img)
    return targets


def apply_pair_colors(scene: Scene, colors: dict[str, np.ndarray]) -> Scene:
    paths = []
    for p in scene.paths:
        if p.source_mask_id in colors:
            fill = np.concatenate([colors[p.source_mask_id], [1.0]])
            p = p.with_fill(fill)
        paths.append(p)
    return scene.with_paths(paths)


# ---------------------------------------------------------------------------
# Stage I


@dataclass
class StructureLossResult:
    total: float
    mse_sum: float
    overlap_sum: float
    color_adjoints: dict = field(default_factory=dict)   # layer -> (h, w, 3)
    gray_adjoints: dict = field(default_factory=dict)


def _paths_by_layer(scene: Scene) -> dict[int, list[int]]:
    grouped: dict[int, list[int]] = {}
    for i, p in enumerate(scene.paths):
        grouped.setdefault(p.layer, []).append(i)
    return grouped


def _layer_color_scene(scene: Scene, indices: list[int]) -> Scene:
    return Scene(width=scene.width, height=scene.height, background=_BLACK,
                 paths=tuple(scene.paths[i] for i in indices))


def _layer_gray_scene(scene: Scene, indices: list[int], opacity: float) -> Scene:
    gray_fill = np.array([0.0, 0.0, 0.0, opacity])
    return Scene(width=scene.width, height=scene.height, background=_WHITE,
                 paths=tuple(scene.paths[i].with_fill(gray_fill) for i in indices))


def structure_loss(scene: Scene, layer_targets: list[np.ndarray],
                   cfg: StructureLossConfig, *, config: RenderConfig | None = None,
                   threads: int = 1) -> StructureLossResult:
    """Total structure loss w1 * sum-MSE + w2 * overlap, both summed over
    pixels, with the adjoint image for each term and layer.

    The overlap term renders each layer's paths in identical black fill at
    the configured opacity on white, so the composite's value IS the
    accumulated transparency prod(1 - a * cov_i); pixels below theta are
    penalized linearly.
    """
    result = StructureLossResult(total=0.0, mse_sum=0.0, overlap_sum=0.0)
    for layer, indices in sorted(_paths_by_layer(scene).items()):
        if layer >= len(layer_targets):
            raise ValidationError(f"no target image for layer {layer}")
        target = layer_targets[layer]
        img = render(_layer_color_scene(scene, indices), config, threads=threads).data
        diff = img - target
        result.mse_sum += float(np.sum(diff * diff))
        result.color_adjoints[layer] = 2.0 * cfg.w1 * diff

        gray = render(_layer_gray_scene(scene, indices, cfg.overlap_opacity),
                      config, threads=threads).data
        transparency = gray[:, :, 0]
        deficit = cfg.theta - transparency
        result.overlap_sum += float(np.sum(np.maximum(deficit, 0.0)))
        adj = np.zeros_like(gray)
        adj[:, :, 0] = np.where(deficit > 0.0, -cfg.w2, 0.0)
        result.gray_adjoints[layer] = adj
    result.total = cfg.w1 * result.mse_sum + cfg.w2 * result.overlap_sum
    return result


def run_stage1(scene: Scene, layer_targets: list[np.ndarray], adam: AdamState,
               cfg: StructureLossConfig | None = None, *, iters: int = 500,
               config: RenderConfig | None = None, threads: int = 1,
               log: LossLog | None = None, start_iter: int = 0) -> Scene:
    """Optimize structure-path control points against the layer targets.

    Colors are never touched here; they are placeholders until fit_colors.
    Raises DivergenceError when the loss stays above 10x its initial value
    for 50 consecutive iterations.
    """
    cfg = cfg or StructureLossConfig()
    if not scene.paths or iters <= 0:
        return scene
    bound = MARGIN_FACTOR * max(scene.width, scene.height)
    guard = None
    for it in range(iters):
        grouped = sorted(_paths_by_layer(scene).items())
        point_grads: dict[int, np.ndarray] = {}
        mse_sum = 0.0
        overlap_sum = 0.0
        for layer, indices in grouped:
            if layer >= len(layer_targets):
                raise ValidationError(f"no target image for layer {layer}")
            target = layer_targets[layer]
            img, grads_c = render_with_grad(
                _layer_color_scene(scene, indices),
                adjoint_fn=lambda img, t=target: 2.0 * cfg.w1 * (img - t),
                config=config, threads=threads)
            diff = img.data - target
            mse_sum += float(np.sum(diff * diff))

            def gray_adjoint(img, w2=cfg.w2, theta=cfg.theta):
                adj = np.zeros_like(img)
                adj[:, :, 0] = np.where(theta - img[:, :, 0] > 0.0, -w2, 0.0)
                return adj

            gray, grads_g = render_with_grad(
                _layer_gray_scene(scene, indices, cfg.overlap_opacity),
                adjoint_fn=gray_adjoint, config=config, threads=threads)
            overlap_sum += float(np.sum(np.maximum(cfg.theta - gray.data[:, :, 0], 0.0)))
            for pos, scene_index in enumerate(indices):
                point_grads[scene_index] = grads_c.points[pos] + grads_g.points[pos]

        total = cfg.w1 * mse_sum + cfg.w2 * overlap_sum
        if log is not None:
            log.add(1, start_iter + it, mse=mse_sum, overlap=overlap_sum, total=total)
        if guard is None:
            guard = _DivergenceGuard(total, "stage 1")
        guard.update(total)

        new_paths = []
        for i, p in enumerate(scene.paths):
            if p.frozen or i not in point_grads:
                new_paths.append(p)
                continue
            pts = adam_step(adam, (p.uid, "points"), p.points, point_grads[i],
                            lr=adam.lr_points, clamp=(-bound, bound))
            new_paths.append(p.with_points(pts))
        scene = scene.with_paths(new_paths)
    return scene


# ---------------------------------------------------------------------------
# color fitting


def _coverage_bits(path: BezierPath, width: int, height: int,
                   config: RenderConfig | None) -> np.ndarray:
    return path_coverage_mask(path, width, height, config) >= 0.5


def fit_colors(scene: Scene, target: Image, strategy: str = "dominant", *,
               iters_mse: int = 100, adam: AdamState | None = None,
               config: RenderConfig | None = None, threads: int = 1) -> Scene:
    """Assign path fills from the target, then freeze every structure path.

    dominant: histogram the 5-bit-quantized target colors over the pixels
    where the path is the frontmost covering one, then use the mean true
    color of the winning bucket. mse: Adam on RGB only (alpha pinned at 1)
    against the fidelity loss. Paths that cover nothing at all are dropped.
    """
    if strategy not in ("dominant", "mse"):
        raise ValidationError(f"unknown color strategy: {strategy!r}")
    tdata = target.data[:, :, :3]
    cover = [_coverage_bits(p, scene.width, scene.height, config) for p in scene.paths]

    keep: list[int] = []
    fills: dict[int, np.ndarray] = {}
    owner = np.full((scene.height, scene.width), -1, dtype=np.int64)
    for i, bits in enumerate(cover):
        owner[bits] = i
    for i, p in enumerate(scene.paths):
        if not cover[i].any():
            continue  # covers nothing anywhere: cleanup
        keep.append(i)
        visible = owner == i
        if not visible.any():
            mean = tdata[cover[i]].mean(axis=0)
            fills[i] = np.concatenate([mean, [1.0]])
            continue
        vis = tdata[visible]
        q = np.round(vis * 31.0).astype(np.int64)
        codes = q[:, 0] * 1024 + q[:, 1] * 32 + q[:, 2]
        values, counts = np.unique(codes, return_counts=True)
        mode = values[np.argmax(counts)]
        rgb = vis[codes == mode].mean(axis=0)  # true colors, not bucket centers
        fills[i] = np.concatenate([rgb, [1.0]])

    paths = [scene.paths[i].with_fill(fills[i]) for i in keep]
    scene = scene.with_paths(paths)

    if strategy == "mse":
        adam = adam or AdamState()
        for _ in range(max(0, iters_mse)):
            img, grads = render_with_grad(
                scene, adjoint_fn=lambda img: 2.0 * (img - tdata),
                config=config, threads=threads)
            new_paths = []
            for i, p in enumerate(scene.paths):
                g = grads.fills[i].copy()
                g[3] = 0.0  # alpha stays 1 for structure paths
                fill = adam_step(adam, (p.uid, "fill"), p.fill, g,
                                 lr=adam.lr_colors, clamp=(0.0, 1.0))
                new_paths.append(p.with_fill(fill))
            scene = scene.with_paths(new_paths)

    return scene.with_paths([replace(p, frozen=True) if p.kind == "structure" else p
                             for p in scene.paths])


# ---------------------------------------------------------------------------
# Stage II


def add_visual_paths(scene: Scene, target: Image, budget_block: int, *,
                     dp_epsilon: float = DP_EPSILON,
                     diff_threshold: float = DIFF_THRESHOLD,
                     min_region_area: int = MIN_VISUAL_REGION_AREA,
                     uids: UidAllocator | None = None,
                     config: RenderConfig | None = None, threads: int = 1,
                     cache: RasterCache | None = None) -> Scene:
    """Spawn up to budget_block visual paths at the largest difference
    regions, all on one new front layer."""
    if budget_block <= 0:
        return scene
    uids = uids or UidAllocator()
    current = render(scene, config, threads=threads, cache=cache)
    diff = abs_diff(current, target)
    regions = connected_components(diff, diff_threshold)
    new_layer = scene.max_layer() + 1
    added: list[BezierPath] = []
    for region in regions:
        if len(added) == budget_block:
            break
        if region.area < min_region_area:
            break  # regions are sorted by area, nothing below qualifies
        bits = region.to_bits(diff.height, diff.width)
        try:
            points = mask_to_path(bits, dp_epsilon)
        except (DegenerateShapeError, EmptyMaskError):
            continue
        mean = target.data[region.pixels[:, 0], region.pixels[:, 1], :3].mean(axis=0)
        added.append(BezierPath(points=points, fill=np.concatenate([mean, [1.0]]),
                                layer=new_layer, kind="visual", uid=uids.take()))
    if not added:
        return scene
    return scene.with_paths(tuple(scene.paths) + tuple(added))


def cleanup(scene: Scene, target: Image, *, min_area: float = CLEANUP_MIN_AREA,
            contribution_tol: float = CLEANUP_CONTRIBUTION_TOL,
            config: RenderConfig | None = None, threads: int = 1,
            cache: RasterCache | None = None) -> Scene:
    """Drop unfrozen paths that are degenerate (binarized coverage below
    min_area pixels) or whose removal barely moves the mean squared error."""
    tdata = target.data[:, :, :3]

    def mean_sq(scene_: Scene) -> float:
        img = render(scene_, config, threads=threads, cache=cache).data
        return float(np.mean((img - tdata) ** 2))

    current_mse = None
    for uid in [p.uid for p in scene.paths if not p.frozen]:
        idx = next(i for i, p in enumerate(scene.paths) if p.uid == uid)
        path = scene.paths[idx]
        without = scene.with_paths(scene.paths[:idx] + scene.paths[idx + 1:])
        area = int(np.count_nonzero(
            path_coverage_mask(path, scene.width, scene.height, config) >= 0.5))
        if area < min_area:
            scene = without
            current_mse = None
            continue
        if current_mse is None:
            current_mse = mean_sq(scene)
        removed_mse = mean_sq(without)
        if abs(removed_mse - current_mse) < contribution_tol:
            scene = without
            current_mse = removed_mse
    return scene


def run_stage2(scene: Scene, target: Image, adam: AdamState, plan: BudgetPlan, *,
               dp_epsilon: float = DP_EPSILON, diff_threshold: float = DIFF_THRESHOLD,
               config: RenderConfig | None = None, threads: int = 1,
               uids: UidAllocator | None = None, log: LossLog | None = None,
               start_iter: int = 0) -> Scene:
    """Visual refinement: add path blocks, optimize unfrozen points and
    fills under the fidelity loss, prune periodically.

    Stops early once the difference image peaks below diff_threshold, and
    never exceeds the path budget.
    """
    if plan.stage2_iters <= 0:
        return scene
    uids = uids or UidAllocator()
    cache = RasterCache()
    tdata = target.data[:, :, :3]
    bound = MARGIN_FACTOR * max(scene.width, scene.height)
    blocks = plan.visual_blocks(len(scene.paths))
    iters_left = plan.stage2_iters
    it = start_iter
    guard = None
    stage2_step = 0
    done = False

    for b_idx, block in enumerate(blocks):
        if done or iters_left <= 0:
            break
        current = render(scene, config, threads=threads, cache=cache)
        if float(abs_diff(current, target).data.max()) < diff_threshold:
            break
        scene = add_visual_paths(scene, target, block, dp_epsilon=dp_epsilon,
                                 diff_threshold=diff_threshold, uids=uids,
                                 config=config, threads=threads, cache=cache)
        n_iters = iters_left if b_idx == len(blocks) - 1 else min(100, iters_left)
        for _ in range(n_iters):
            img, grads = render_with_grad(
                scene, adjoint_fn=lambda img: 2.0 * (img - tdata),
                config=config, threads=threads, cache=cache)
            if float(np.abs(img.data - tdata).mean(axis=2).max()) < diff_threshold:
                done = True
                break
            fid = float(np.sum((img.data - tdata) ** 2))
            if log is not None:
                log.add(2, it, fidelity=fid, total=fid)
            it += 1
            iters_left -= 1
            stage2_step += 1
            if guard is None:
                guard = _DivergenceGuard(fid, "stage 2")
            guard.update(fid)

            new_paths = []
            for i, p in enumerate(scene.paths):
                if p.frozen:
                    new_paths.append(p)
                    continue
                pts = adam_step(adam, (p.uid, "points"), p.points, grads.points[i],
                                lr=adam.lr_points, clamp=(-bound, bound))
                fill = adam_step(adam, (p.uid, "fill"), p.fill, grads.fills[i],
                                 lr=adam.lr_colors, clamp=(0.0, 1.0))
                new_paths.append(p.with_points(pts).with_fill(fill))
            scene = scene.with_paths(new_paths)

            if stage2_step % CLEANUP_INTERVAL == 0:
                scene = cleanup(scene, target, config=config, threads=threads,
                                cache=cache)
    return scene
