"""Raster image containers, PNG I/O, pixel arithmetic, and component analysis.

Images are float64 arrays of shape (height, width, channels) with values in
[0, 1], row major, origin at the top-left corner. Channels are 1 (difference
maps, masks), 3 (RGB), or 4 (RGBA). Instances are treated as immutable:
every operation returns a new object and never writes into an existing buffer.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import cv2
import numpy as np
from scipy import ndimage

from .errors import DecodeError, EmptyMaskError, ShapeMismatchError, ValidationError

_ALLOWED_CHANNELS = (1, 3, 4)

# 8-connectivity structuring element shared by every labeling call in the package.
_EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class Image:
    """An immutable float image in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.data, dtype=np.float64)
        if a.ndim == 2:
            a = a[:, :, None]
        if a.ndim != 3 or a.shape[2] not in _ALLOWED_CHANNELS:
            raise ValidationError(
                f"image shape {np.shape(self.data)} is not (h, w, c) with c in {_ALLOWED_CHANNELS}"
            )
        if a.shape[0] < 1 or a.shape[1] < 1:
            raise ValidationError("image dimensions must be positive")
        if not np.all(np.isfinite(a)):
            raise ValidationError("image contains non-finite values")
        if a.min() < 0.0 or a.max() > 1.0:
            raise ValidationError("image values outside [0, 1]")
        a = np.ascontiguousarray(a)
        a.setflags(write=False)
        object.__setattr__(self, "data", a)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class BinaryMask:
    """A boolean pixel set tagged with its simplification level and a stable id."""

    bits: np.ndarray
    level: int
    id: str
    area: int = field(init=False)

    def __post_init__(self):
        b = np.asarray(self.bits)
        if b.ndim != 2 or b.dtype != np.bool_:
            raise ValidationError("mask bits must be a 2-D boolean array")
        b = np.ascontiguousarray(b)
        b.setflags(write=False)
        object.__setattr__(self, "bits", b)
        object.__setattr__(self, "area", int(np.count_nonzero(b)))

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]


@dataclass(frozen=True)
class DiffRegion:
    """One 8-connected set of above-threshold pixels.

    pixels: (n, 2) int array of (row, col) in scan order.
    bbox:   (top, left, bottom, right), inclusive.
    """

    pixels: np.ndarray
    area: int
    bbox: tuple[int, int, int, int]

    def to_bits(self, height: int, width: int) -> np.ndarray:
        bits = np.zeros((height, width), dtype=bool)
        bits[self.pixels[:, 0], self.pixels[:, 1]] = True
        return bits


def load_png(path) -> Image:
    """Read an 8- or 16-bit PNG as a float image in [0, 1]."""
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise DecodeError(f"cannot decode PNG: {path}")
    if raw.dtype == np.uint8:
        scale = 255.0
    elif raw.dtype == np.uint16:
        scale = 65535.0
    else:
        raise DecodeError(f"unsupported PNG sample type {raw.dtype}: {path}")
    a = raw.astype(np.float64) / scale
    if a.ndim == 3 and a.shape[2] == 3:
        a = a[:, :, ::-1]  # BGR -> RGB
    elif a.ndim == 3 and a.shape[2] == 4:
        a = a[:, :, [2, 1, 0, 3]]  # BGRA -> RGBA
    return Image(a)


def save_png(image: Image, path) -> None:
    """Write an image as an 8-bit PNG; values quantize to round(v * 255)."""
    q = np.floor(image.data * 255.0 + 0.5).astype(np.uint8)
    if image.channels == 3:
        out = q[:, :, ::-1]
    elif image.channels == 4:
        out = q[:, :, [2, 1, 0, 3]]
    else:
        out = q[:, :, 0]
    if not cv2.imwrite(str(path), out):
        raise OSError(f"cannot write PNG: {path}")


def abs_diff(a: Image, b: Image) -> Image:
    """Single-channel per-pixel difference: mean over channels of |a - b|."""
    if a.data.shape != b.data.shape:
        raise ShapeMismatchError(f"image shapes differ: {a.data.shape} vs {b.data.shape}")
    return Image(np.abs(a.data - b.data).mean(axis=2, keepdims=True))


def connected_components(d: Image, threshold: float) -> list[DiffRegion]:
    """8-connected regions of pixels with d >= threshold, largest first.

    Ties in area break on the bounding box, top-left lexicographic.
    """
    if d.channels != 1:
        raise ValidationError("connected_components expects a single-channel image")
    fg = d.data[:, :, 0] >= threshold
    labels, count = ndimage.label(fg, structure=_EIGHT_CONNECTED)
    if count == 0:
        return []
    regions = []
    for index, sl in enumerate(ndimage.find_objects(labels), start=1):
        local = labels[sl] == index
        rows, cols = np.nonzero(local)
        pixels = np.column_stack((rows + sl[0].start, cols + sl[1].start)).astype(np.int64)
        bbox = (sl[0].start, sl[1].start, sl[0].stop - 1, sl[1].stop - 1)
        regions.append(DiffRegion(pixels=pixels, area=len(pixels), bbox=bbox))
    regions.sort(key=lambda r: (-r.area, r.bbox))
    return regions


def largest_component(bits: np.ndarray) -> np.ndarray:
    """Boolean array of the largest 8-connected component (ties: scan order)."""
    labels, count = ndimage.label(bits, structure=_EIGHT_CONNECTED)
    if count == 0:
        raise EmptyMaskError("mask has no foreground pixels")
    areas = np.bincount(labels.ravel())[1:]
    return labels == (int(np.argmax(areas)) + 1)
