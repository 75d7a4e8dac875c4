"""Binary-mask export in the vectorizer's `masks.json` manifest layout.

Masks come either from a Segment-Anything automatic mask generator (needs
the 'models' extra plus a checkpoint) or from any callable that maps an RGB
float image to a list of boolean arrays, which is what the tests use. The
level tag is taken from the image filename: a `level_3.png` input tags its
masks as level 3, anything else defaults to level 0.
"""

from __future__ import annotations

import json
import os
import re

import cv2
import numpy as np

from .errors import ModelUnavailableError, ValidationError
from .pngio import load_rgb

MANIFEST_NAME = "masks.json"


def level_from_filename(path: str) -> int:
    m = re.match(r"level_(\d+)\.", os.path.basename(path))
    return int(m.group(1)) if m else 0


def write_masks_manifest(masks_by_level: dict[int, list[np.ndarray]],
                         out_dir: str) -> str:
    """Write mask PNGs plus the manifest; returns the manifest path.

    Each mask is a boolean (H, W) array; files hold exactly {0, 255}. Empty
    masks are dropped. Ids follow the `L<level>_m<i>` convention with `i`
    numbering the kept masks per level in input order.
    """
    os.makedirs(out_dir, exist_ok=True)
    levels = []
    for level in sorted(masks_by_level):
        entries = []
        for bits in masks_by_level[level]:
            bits = np.asarray(bits)
            if bits.dtype != bool or bits.ndim != 2:
                raise ValidationError("masks must be 2-D boolean arrays")
            if not bits.any():
                continue
            mid = f"L{level}_m{len(entries)}"
            name = f"{mid}.png"
            if not cv2.imwrite(os.path.join(out_dir, name),
                               bits.astype(np.uint8) * 255):
                raise OSError(f"failed to write {name}")
            rows, cols = np.nonzero(bits)
            entries.append({"id": mid, "file": name, "area": int(bits.sum()),
                            "bbox": [int(rows.min()), int(cols.min()),
                                     int(rows.max()), int(cols.max())]})
        if entries:
            levels.append({"level": level, "masks": entries})
    path = os.path.join(out_dir, MANIFEST_NAME)
    with open(path, "w") as fh:
        json.dump({"levels": levels}, fh, indent=2)
        fh.write("\n")
    return path


class SamBackend:
    """Automatic mask generation with a Segment-Anything checkpoint."""

    def __init__(self, checkpoint: str, model_type: str = "vit_h",
                 device: str | None = None):
        try:
            import torch
            from segment_anything import (SamAutomaticMaskGenerator,
                                          sam_model_registry)
        except ImportError as exc:
            raise ModelUnavailableError(
                "mask export needs torch and segment-anything; install the "
                "'models' extra and download a SAM checkpoint") from exc
        if not os.path.isfile(checkpoint):
            raise ModelUnavailableError(f"SAM checkpoint not found: {checkpoint}")
        device = device or ("cuda" if torch.cuda.is_available() else "cpu")
        sam = sam_model_registry[model_type](checkpoint=checkpoint).to(device)
        self._generator = SamAutomaticMaskGenerator(sam)

    def __call__(self, img: np.ndarray) -> list[np.ndarray]:
        u8 = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
        records = self._generator.generate(u8)
        records.sort(key=lambda r: -int(r["area"]))
        return [np.asarray(r["segmentation"], dtype=bool) for r in records]


def export_sam_masks(image_path: str, out_dir: str, segmenter=None,
                     level: int | None = None, **backend_kwargs) -> str:
    """Segment one image and write its masks; returns the manifest path."""
    if segmenter is None:
        segmenter = SamBackend(**backend_kwargs)
    if level is None:
        level = level_from_filename(image_path)
    img = load_rgb(image_path)
    return write_masks_manifest({level: segmenter(img)}, out_dir)
