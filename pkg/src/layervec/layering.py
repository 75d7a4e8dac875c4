"""Back-to-front layer assignment for deduplicated masks.

Each mask goes to the lowest-index (furthest back) layer where it fits
without touching what is already there; a new front layer opens when none
fits. Within a layer, masks are therefore pairwise disjoint (up to the
configured slack).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .masks import MaskSet, processing_order


@dataclass(frozen=True)
class LayerStack:
    """Ordered mask-id lists, index 0 = backmost."""

    layers: tuple[tuple[str, ...], ...]

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(tuple(layer) for layer in self.layers))
        seen = set()
        for layer in self.layers:
            for mask_id in layer:
                if mask_id in seen:
                    raise ValidationError(f"mask {mask_id!r} appears in two layers")
                seen.add(mask_id)

    def layer_of(self, mask_id: str) -> int:
        for j, layer in enumerate(self.layers):
            if mask_id in layer:
                return j
        raise KeyError(mask_id)

    def __len__(self) -> int:
        return len(self.layers)

    def all_ids(self) -> list[str]:
        return [mask_id for layer in self.layers for mask_id in layer]


@dataclass(frozen=True)
class LayerReport:
    ok: bool
    disjointness_violations: tuple[str, ...] = field(default=())
    minimality_violations: tuple[str, ...] = field(default=())


def build_layers(ms: MaskSet, overlap_slack: int = 0) -> LayerStack:
    """Place masks (most simplified level first, then area desc, then id)
    into the lowest layer where they share at most overlap_slack pixels
    with that layer's union."""
    if overlap_slack < 0:
        raise ValidationError("overlap slack must be >= 0")
    layers: list[list[str]] = []
    unions: list[np.ndarray] = []
    for m in processing_order(ms.masks):
        placed = False
        for j, union in enumerate(unions):
            if int(np.count_nonzero(m.bits & union)) <= overlap_slack:
                layers[j].append(m.id)
                unions[j] = union | m.bits
                placed = True
                break
        if not placed:
            layers.append([m.id])
            unions.append(m.bits.copy())
    return LayerStack(layers=tuple(tuple(layer) for layer in layers))


def verify_layers(ls: LayerStack, ms: MaskSet, overlap_slack: int = 0) -> LayerReport:
    """Independent check of within-layer disjointness and placement minimality.

    Minimality: a mask in layer j must conflict (> slack shared pixels) with
    the masks that were placed before it in every lower layer; otherwise it
    could have gone further back.
    """
    disjoint: list[str] = []
    minimal: list[str] = []
    order = {m.id: i for i, m in enumerate(processing_order(ms.masks))}

    for j, layer in enumerate(ls.layers):
        for a_pos in range(len(layer)):
            for b_pos in range(a_pos + 1, len(layer)):
                a, b = ms.by_id(layer[a_pos]), ms.by_id(layer[b_pos])
                shared = int(np.count_nonzero(a.bits & b.bits))
                if shared > overlap_slack:
                    disjoint.append(
                        f"layer {j}: {a.id} and {b.id} share {shared} px")

    for j, layer in enumerate(ls.layers):
        for mask_id in layer:
            m = ms.by_id(mask_id)
            for lower in range(j):
                earlier = np.zeros(m.bits.shape, dtype=bool)
                for other_id in ls.layers[lower]:
                    if order[other_id] < order[mask_id]:
                        earlier |= ms.by_id(other_id).bits
                shared = int(np.count_nonzero(m.bits & earlier))
                if shared <= overlap_slack:
                    minimal.append(
                        f"{mask_id} in layer {j} could move to layer {lower} "
                        f"(only {shared} shared px)")
    return LayerReport(ok=not disjoint and not minimal,
                       disjointness_violations=tuple(disjoint),
                       minimality_violations=tuple(minimal))


def save_layers(ls: LayerStack, path: str) -> None:
    with open(path, "w") as fh:
        json.dump({"layers": [list(layer) for layer in ls.layers]}, fh, indent=2)
        fh.write("\n")


def load_layers(path: str) -> LayerStack:
    with open(path) as fh:
        doc = json.load(fh)
    return LayerStack(layers=tuple(tuple(layer) for layer in doc["layers"]))
