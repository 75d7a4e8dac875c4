"""8-bit PNG loading and saving.

Images are handled internally as float64 RGB arrays in [0, 1]; files on
disk are plain 8-bit PNGs.
"""

from __future__ import annotations

import os

import cv2
import numpy as np


def load_rgb(path: str) -> np.ndarray:
    """Read a PNG as an (H, W, 3) float array in [0, 1]."""
    raw = cv2.imread(path, cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise OSError(f"cannot read image: {path}")
    if raw.ndim == 2:
        raw = cv2.cvtColor(raw, cv2.COLOR_GRAY2BGR)
    if raw.shape[2] == 4:
        bgr = raw[:, :, :3].astype(np.float64)
        alpha = raw[:, :, 3:4].astype(np.float64) / 255.0
        raw = bgr * alpha + 255.0 * (1.0 - alpha)
    rgb = cv2.cvtColor(raw.astype(np.uint8), cv2.COLOR_BGR2RGB)
    return rgb.astype(np.float64) / 255.0


def save_rgb(path: str, img: np.ndarray) -> None:
    """Write an (H, W, 3) float array in [0, 1] as an 8-bit PNG."""
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) array, got shape {img.shape}")
    u8 = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    if not cv2.imwrite(path, cv2.cvtColor(u8, cv2.COLOR_RGB2BGR)):
        raise OSError(f"failed to write {path}")


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
