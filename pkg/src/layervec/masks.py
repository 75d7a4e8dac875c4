"""Per-level mask acquisition: manifest import, builtin fallback segmentation,
and cross-level deduplication.

Masks carry the simplification level they came from; deduplication and the
downstream layering both walk levels from most simplified to least, so the
macro structures found on heavily simplified levels win identity.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import cv2
import numpy as np
from scipy import ndimage

from .errors import DecodeError, ManifestError, ShapeMismatchError, ValidationError
from .geometry import jaccard
from .image import BinaryMask, Image

MANIFEST_NAME = "masks.json"
_EIGHT = np.ones((3, 3), dtype=bool)

DEFAULT_MIN_AREA = 64
DEFAULT_JACCARD_THRESHOLD = 0.90


@dataclass(frozen=True)
class MaskSet:
    masks: tuple[BinaryMask, ...]
    source: str  # "imported" | "builtin"
    warnings: tuple[str, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "masks", tuple(self.masks))
        object.__setattr__(self, "warnings", tuple(self.warnings))
        if self.masks:
            shape = self.masks[0].bits.shape
            ids = set()
            for m in self.masks:
                if m.bits.shape != shape:
                    raise ShapeMismatchError(
                        f"mask {m.id}: shape {m.bits.shape} != {shape}")
                if m.id in ids:
                    raise ValidationError(f"duplicate mask id {m.id!r}")
                ids.add(m.id)

    def __len__(self) -> int:
        return len(self.masks)

    def by_id(self, mask_id: str) -> BinaryMask:
        for m in self.masks:
            if m.id == mask_id:
                return m
        raise KeyError(mask_id)


def processing_order(masks) -> list[BinaryMask]:
    """Most simplified level first; within a level, area descending, then id."""
    return sorted(masks, key=lambda m: (-m.level, -m.area, m.id))


# ---------------------------------------------------------------------------
# import


def import_masks(manifest_path: str) -> MaskSet:
    """Load a mask set from a `masks.json` manifest.

    Mask PNGs are 8-bit and binarize at 128; empty masks are dropped and
    recorded as warnings rather than failing the run.
    """
    if os.path.isdir(manifest_path):
        manifest_path = os.path.join(manifest_path, MANIFEST_NAME)
    if not os.path.isfile(manifest_path):
        raise ManifestError(f"mask manifest not found: {manifest_path}")
    with open(manifest_path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"bad mask manifest: {exc}") from exc
    if not isinstance(doc.get("levels"), list):
        raise ManifestError("mask manifest needs a 'levels' list")
    base = os.path.dirname(manifest_path)

    masks: list[BinaryMask] = []
    warnings: list[str] = []
    for level_entry in doc["levels"]:
        level = int(level_entry.get("level", 0))
        for entry in level_entry.get("masks", []):
            path = os.path.join(base, entry["file"])
            raw = cv2.imread(path, cv2.IMREAD_GRAYSCALE)
            if raw is None:
                raise DecodeError(f"cannot read mask file: {path}")
            bits = raw >= 128
            if not bits.any():
                warnings.append(f"mask {entry.get('id', path)} is empty, dropped")
                continue
            masks.append(BinaryMask(bits=bits, level=level, id=str(entry["id"])))
    return MaskSet(masks=tuple(masks), source="imported", warnings=tuple(warnings))


def save_masks(ms: MaskSet, out_dir: str) -> str:
    """Write one PNG per mask plus the manifest; returns the manifest path."""
    os.makedirs(out_dir, exist_ok=True)
    by_level: dict[int, list] = {}
    for m in ms.masks:
        name = f"{m.id}.png"
        cv2.imwrite(os.path.join(out_dir, name), m.bits.astype(np.uint8) * 255)
        rows, cols = np.nonzero(m.bits)
        bbox = [int(rows.min()), int(cols.min()), int(rows.max()), int(cols.max())]
        by_level.setdefault(m.level, []).append(
            {"id": m.id, "file": name, "area": int(m.area), "bbox": bbox})
    doc = {"levels": [{"level": lv, "masks": by_level[lv]} for lv in sorted(by_level)]}
    path = os.path.join(out_dir, MANIFEST_NAME)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
    return path


# ---------------------------------------------------------------------------
# builtin segmentation


def builtin_segment(img: Image, min_area: int = DEFAULT_MIN_AREA, *,
                    level: int = 0) -> list[BinaryMask]:
    """Fallback segmenter: 4-bit color quantization + 8-connected components.

    Components of at least min_area pixels come back largest-first with ids
    L{level}_m{i}; the level tag is the caller's simplification level.
    """
    data = img.data[:, :, :3] if img.channels >= 3 else img.data
    q = (np.round(data * 255.0).astype(np.int64) >> 4)
    code = q[:, :, 0]
    for ch in range(1, q.shape[2]):
        code = code * 16 + q[:, :, ch]

    found: list[tuple[int, tuple, np.ndarray]] = []
    for value in np.unique(code):
        labels, count = ndimage.label(code == value, structure=_EIGHT)
        for sl_index, sl in enumerate(ndimage.find_objects(labels), start=1):
            bits = np.zeros(code.shape, dtype=bool)
            local = labels[sl] == sl_index
            area = int(local.sum())
            if area < min_area:
                continue
            bits[sl] = local
            found.append((area, (sl[0].start, sl[1].start), bits))
    found.sort(key=lambda t: (-t[0], t[1]))
    return [BinaryMask(bits=bits, level=level, id=f"L{level}_m{i}")
            for i, (_, _, bits) in enumerate(found)]


# ---------------------------------------------------------------------------
# deduplication


def dedup_across_levels(ms: MaskSet,
                        jaccard_threshold: float = DEFAULT_JACCARD_THRESHOLD) -> MaskSet:
    """Keep each region once, preferring its most-simplified-level occurrence.

    A mask survives only if its Jaccard similarity to every already-kept mask
    is strictly below the threshold.
    """
    if not (0.0 < jaccard_threshold <= 1.0):
        raise ValidationError("jaccard threshold must be in (0, 1]")
    kept: list[BinaryMask] = []
    for m in processing_order(ms.masks):
        if all(jaccard(m, k) < jaccard_threshold for k in kept):
            kept.append(m)
    return MaskSet(masks=tuple(kept), source=ms.source, warnings=ms.warnings)
