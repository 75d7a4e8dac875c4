"""Evaluation: pixel MSE and vector compactness (VeC)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeMismatchError
from .image import BinaryMask, Image
from .render import RenderConfig, path_coverage_mask
from .scene import Scene

CONTAIN_THRESHOLD = 0.85


def mse(a: Image, b: Image) -> float:
    """Mean squared difference over pixels and channels."""
    if a.data.shape != b.data.shape:
        raise ShapeMismatchError(f"mse: {a.data.shape} vs {b.data.shape}")
    return float(np.mean((a.data - b.data) ** 2))


@dataclass(frozen=True)
class MaskCompactness:
    mask_id: str
    interacting: int
    contained: int
    flagged: bool

    @property
    def ratio(self) -> float:
        return self.contained / self.interacting if self.interacting else 0.0


@dataclass(frozen=True)
class VeCReport:
    per_mask: tuple[MaskCompactness, ...]
    mean: float
    std: float

    def to_json(self) -> dict:
        return {
            "mean": self.mean,
            "std": self.std,
            "per_mask": [
                {"id": m.mask_id, "interacting": m.interacting,
                 "contained": m.contained, "ratio": m.ratio, "flagged": m.flagged}
                for m in self.per_mask
            ],
        }


def vec_compactness(scene: Scene, masks: list[BinaryMask],
                    contain_threshold: float = CONTAIN_THRESHOLD, *,
                    config: RenderConfig | None = None) -> VeCReport:
    """Per-mask fraction of interacting paths that sit mostly inside it.

    A path interacts with a mask when their binarized (0.5) coverages share
    at least one pixel, and counts as contained when at least
    contain_threshold of the path's own area lies inside the mask. Masks no
    path touches are flagged and left out of the aggregate.
    """
    cover = []
    for p in scene.paths:
        bits = path_coverage_mask(p, scene.width, scene.height, config) >= 0.5
        cover.append(bits)

    per_mask = []
    ratios = []
    for m in masks:
        if m.bits.shape != (scene.height, scene.width):
            raise ShapeMismatchError(f"mask {m.id} does not match the canvas")
        interacting = 0
        contained = 0
        for bits in cover:
            area = int(np.count_nonzero(bits))
            if area == 0:
                continue
            inside = int(np.count_nonzero(bits & m.bits))
            if inside == 0:
                continue
            interacting += 1
            if inside / area >= contain_threshold:
                contained += 1
        entry = MaskCompactness(mask_id=m.id, interacting=interacting,
                                contained=contained, flagged=interacting == 0)
        per_mask.append(entry)
        if not entry.flagged:
            ratios.append(entry.ratio)

    if ratios:
        arr = np.array(ratios)
        mean, std = float(arr.mean()), float(arr.std())
    else:
        mean, std = 0.0, 0.0
    return VeCReport(per_mask=tuple(per_mask), mean=mean, std=std)
