"""Simplified-image sequences: native filters plus manifest-based loading.

A sequence is an ordered list of images, level 0 being the original and
later levels progressively simplified. Native methods (Gaussian, bilateral,
SLIC) compute every level from the original with per-level parameters;
externally produced sequences arrive through a `sequence.json` manifest.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import cv2
import numpy as np
from scipy.ndimage import convolve1d

from .errors import DecodeError, ManifestError, ShapeMismatchError, ValidationError
from .image import Image, load_png, save_png

GAUSSIAN_KERNEL_SIZES = [2, 6, 10, 14]
BILATERAL_LEVELS = 4
SLIC_COUNTS = [400, 200, 100, 50]
SLIC_COMPACTNESS = 10.0
SLIC_ITERS = 10

MANIFEST_NAME = "sequence.json"


@dataclass(frozen=True)
class SimplificationSequence:
    """levels[0] is the original; every later level is a simplification of it."""

    levels: tuple[Image, ...]
    method: str
    params: tuple[dict, ...] = field(default=())

    def __post_init__(self):
        if len(self.levels) < 1:
            raise ValidationError("a sequence needs at least one level")
        h, w = self.levels[0].height, self.levels[0].width
        for k, lv in enumerate(self.levels):
            if lv.height != h or lv.width != w:
                raise ShapeMismatchError(f"level {k} is {lv.width}x{lv.height}, level 0 is {w}x{h}")
        object.__setattr__(self, "levels", tuple(self.levels))
        params = self.params or tuple({} for _ in self.levels)
        if len(params) != len(self.levels):
            raise ValidationError("one parameter record per level")
        object.__setattr__(self, "params", tuple(params))

    def __len__(self) -> int:
        return len(self.levels)


# ---------------------------------------------------------------------------
# Gaussian


def gaussian_kernel(size: int) -> np.ndarray:
    """Normalized 1-D Gaussian for a nominal kernel size, sigma = size / 3.

    Realized on a symmetric odd support of radius size // 2 so the filter has
    no half-pixel shift even for even nominal sizes.
    """
    if size < 1:
        raise ValidationError("kernel size must be positive")
    sigma = size / 3.0
    radius = max(1, size // 2)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def _gaussian_blur(data: np.ndarray, size: int) -> np.ndarray:
    k = gaussian_kernel(size)
    out = convolve1d(data, k, axis=0, mode="reflect")
    out = convolve1d(out, k, axis=1, mode="reflect")
    return np.clip(out, 0.0, 1.0)


def gaussian_sequence(img: Image, kernel_sizes: list[int] | None = None) -> SimplificationSequence:
    sizes = GAUSSIAN_KERNEL_SIZES if kernel_sizes is None else list(kernel_sizes)
    if any(s < 1 for s in sizes):
        raise ValidationError("kernel sizes must be positive")
    levels = [img]
    params: list[dict] = [{}]
    for s in sizes:
        levels.append(Image(_gaussian_blur(img.data, s)))
        params.append({"kernel_size": s, "sigma": s / 3.0})
    return SimplificationSequence(levels=tuple(levels), method="gaussian", params=tuple(params))


# ---------------------------------------------------------------------------
# bilateral


def bilateral_filter(data: np.ndarray, diameter: int, sigma_color: float,
                     sigma_space: float) -> np.ndarray:
    """Joint bilateral filter over a square window of radius diameter // 2.

    Range weights use Euclidean color distance on a [0, 255] scale; borders
    are handled by symmetric padding.
    """
    if diameter < 1 or sigma_color <= 0 or sigma_space <= 0:
        raise ValidationError("bilateral parameters must be positive")
    radius = max(1, diameter // 2)
    pad = np.pad(data, ((radius, radius), (radius, radius), (0, 0)), mode="symmetric")
    h, w = data.shape[:2]
    num = np.zeros_like(data)
    den = np.zeros((h, w, 1))
    inv2_space = 1.0 / (2.0 * sigma_space * sigma_space)
    inv2_color = 1.0 / (2.0 * sigma_color * sigma_color)
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            shifted = pad[radius + dy:radius + dy + h, radius + dx:radius + dx + w, :]
            spatial = np.exp(-(dy * dy + dx * dx) * inv2_space)
            cdist2 = np.sum((shifted - data) ** 2, axis=2, keepdims=True) * (255.0 ** 2)
            weight = spatial * np.exp(-cdist2 * inv2_color)
            num += weight * shifted
            den += weight
    return np.clip(num / den, 0.0, 1.0)


def bilateral_sequence(img: Image, n_levels: int = BILATERAL_LEVELS) -> SimplificationSequence:
    levels = [img]
    params: list[dict] = [{}]
    for n in range(n_levels):
        d, sc, ss = 10 + 5 * n, 100.0 + 50.0 * n, 100.0 + 50.0 * n
        levels.append(Image(bilateral_filter(img.data, d, sc, ss)))
        params.append({"diameter": d, "sigma_color": sc, "sigma_space": ss})
    return SimplificationSequence(levels=tuple(levels), method="bilateral", params=tuple(params))


# ---------------------------------------------------------------------------
# SLIC superpixels


def _grid_centers(h: int, w: int, count: int) -> tuple[int, int]:
    spacing = np.sqrt(h * w / count)
    rows = max(1, int(round(h / spacing)))
    cols = max(1, int(round(w / spacing)))
    while rows * cols > count:
        if rows >= cols and rows > 1:
            rows -= 1
        elif cols > 1:
            cols -= 1
        else:
            break
    return rows, cols


def _to_lab(data: np.ndarray) -> np.ndarray:
    rgb = data if data.shape[2] == 3 else np.repeat(data[:, :, :1], 3, axis=2)
    return cv2.cvtColor(rgb.astype(np.float32), cv2.COLOR_RGB2Lab).astype(np.float64)


def slic_labels(img: Image, count: int, compactness: float = SLIC_COMPACTNESS,
                iters: int = SLIC_ITERS) -> np.ndarray:
    """SLIC cluster labels, one per pixel, at most `count` distinct values.

    Grid-seeded local k-means in (L, a, b, x, y) with the usual compactness
    scaling; stray fragments below a quarter of the nominal superpixel size
    are merged into an adjacent region afterwards.
    """
    h, w = img.height, img.width
    if count < 1 or count > h * w:
        raise ValidationError("superpixel count must be in [1, pixel count]")
    lab = _to_lab(img.data)
    rows, cols = _grid_centers(h, w, count)
    k = rows * cols
    spacing = np.sqrt(h * w / k)

    cy = (np.arange(rows) + 0.5) * h / rows
    cx = (np.arange(cols) + 0.5) * w / cols
    gy, gx = np.meshgrid(cy, cx, indexing="ij")
    centers_xy = np.stack([gy.ravel(), gx.ravel()], axis=1)
    iy = np.clip(centers_xy[:, 0].astype(int), 0, h - 1)
    ix = np.clip(centers_xy[:, 1].astype(int), 0, w - 1)
    centers_lab = lab[iy, ix].astype(np.float64)

    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    ratio2 = (compactness / spacing) ** 2
    labels = np.zeros((h, w), dtype=np.int64)
    for _ in range(iters):
        best = np.full((h, w), np.inf)
        for c in range(k):
            y0 = max(0, int(centers_xy[c, 0] - 2 * spacing))
            y1 = min(h, int(centers_xy[c, 0] + 2 * spacing) + 1)
            x0 = max(0, int(centers_xy[c, 1] - 2 * spacing))
            x1 = min(w, int(centers_xy[c, 1] + 2 * spacing) + 1)
            if y0 >= y1 or x0 >= x1:
                continue
            dlab = lab[y0:y1, x0:x1] - centers_lab[c]
            d2 = np.einsum("ijc,ijc->ij", dlab, dlab)
            d2 = d2 + ratio2 * ((yy[y0:y1, x0:x1] - centers_xy[c, 0]) ** 2
                                + (xx[y0:y1, x0:x1] - centers_xy[c, 1]) ** 2)
            win_best = best[y0:y1, x0:x1]
            upd = d2 < win_best
            win_best[upd] = d2[upd]
            labels[y0:y1, x0:x1][upd] = c
        unseen = ~np.isfinite(best)
        if unseen.any():
            # far from every window: fall back to the nearest center spatially
            uy, ux = np.nonzero(unseen)
            d = (uy[:, None] - centers_xy[None, :, 0]) ** 2 \
                + (ux[:, None] - centers_xy[None, :, 1]) ** 2
            labels[uy, ux] = np.argmin(d, axis=1)
        for c in range(k):
            sel = labels == c
            if sel.any():
                centers_lab[c] = lab[sel].mean(axis=0)
                centers_xy[c] = [yy[sel].mean(), xx[sel].mean()]
    return _merge_fragments(labels, int(spacing * spacing) // 4)


def _merge_fragments(labels: np.ndarray, min_size: int) -> np.ndarray:
    """Merge 4-connected fragments smaller than min_size into a neighbor.

    Regions are visited in scan order; a small fragment joins the final label
    of the already-visited pixel just before it, so merged regions are final.
    """
    h, w = labels.shape
    out = np.full((h, w), -1, dtype=np.int64)
    for r in range(h):
        for c in range(w):
            if out[r, c] != -1:
                continue
            adj = -1
            if c > 0:
                adj = out[r, c - 1]
            elif r > 0:
                adj = out[r - 1, c]
            lab = labels[r, c]
            stack = [(r, c)]
            out[r, c] = lab
            region = [(r, c)]
            while stack:
                y, x = stack.pop()
                for ny, nx in ((y - 1, x), (y + 1, x), (y, x - 1), (y, x + 1)):
                    if 0 <= ny < h and 0 <= nx < w and out[ny, nx] == -1 \
                            and labels[ny, nx] == lab:
                        out[ny, nx] = lab
                        region.append((ny, nx))
                        stack.append((ny, nx))
            if len(region) < min_size and adj != -1 and adj != lab:
                rr = np.array(region)
                out[rr[:, 0], rr[:, 1]] = adj
    return out


def slic_sequence(img: Image, counts: list[int] | None = None) -> SimplificationSequence:
    counts = SLIC_COUNTS if counts is None else list(counts)
    levels = [img]
    params: list[dict] = [{}]
    for count in counts:
        labels = slic_labels(img, count)
        out = np.empty_like(img.data)
        for lab in np.unique(labels):
            sel = labels == lab
            out[sel] = img.data[sel].mean(axis=0)
        levels.append(Image(out))
        params.append({"superpixels": count, "compactness": SLIC_COMPACTNESS,
                       "iterations": SLIC_ITERS})
    return SimplificationSequence(levels=tuple(levels), method="slic", params=tuple(params))


# ---------------------------------------------------------------------------
# manifest I/O


def save_sequence(seq: SimplificationSequence, out_dir: str) -> str:
    """Write level PNGs plus the sequence manifest; returns the manifest path."""
    os.makedirs(out_dir, exist_ok=True)
    entries = []
    for k, level in enumerate(seq.levels):
        name = f"level_{k}.png"
        save_png(level, os.path.join(out_dir, name))
        entries.append({"index": k, "file": name, "params": dict(seq.params[k])})
    manifest = {"original": "level_0.png", "method": seq.method, "levels": entries}
    path = os.path.join(out_dir, MANIFEST_NAME)
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    return path


def load_sequence(manifest_path: str) -> SimplificationSequence:
    """Load a sequence from its manifest; paths resolve relative to it."""
    if os.path.isdir(manifest_path):
        manifest_path = os.path.join(manifest_path, MANIFEST_NAME)
    if not os.path.isfile(manifest_path):
        raise ManifestError(f"sequence manifest not found: {manifest_path}")
    with open(manifest_path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"bad sequence manifest: {exc}") from exc
    if not isinstance(doc.get("levels"), list) or not doc["levels"]:
        raise ManifestError("sequence manifest needs a non-empty 'levels' list")
    base = os.path.dirname(manifest_path)

    entries = sorted(doc["levels"], key=lambda e: e.get("index", -1))
    indices = [e.get("index") for e in entries]
    if indices != list(range(len(entries))):
        raise ManifestError(f"level indices must be contiguous from 0, got {indices}")

    levels = []
    params = []
    for e in entries:
        try:
            levels.append(load_png(os.path.join(base, e["file"])))
        except DecodeError as exc:
            raise ManifestError(f"level {e.get('index')}: {exc}") from exc
        params.append(dict(e.get("params", {})))
    seq = SimplificationSequence(levels=tuple(levels), method=str(doc.get("method", "unknown")),
                                 params=tuple(params))
    original = doc.get("original")
    if original:
        ref = load_png(os.path.join(base, original))
        if ref.data.shape != seq.levels[0].data.shape \
                or not np.array_equal(ref.data, seq.levels[0].data):
            raise ManifestError("level 0 does not match the declared original image")
    return seq
