"""Contour tracing, polyline simplification, and mask set arithmetic.

Vertices live in continuous pixel coordinates: x = column + 0.5, y = row + 0.5
puts a vertex on a pixel's center, matching the renderer's sample grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateShapeError, EmptyMaskError, ShapeMismatchError, ValidationError
from .image import BinaryMask, largest_component


@dataclass(frozen=True)
class Polyline:
    """Ordered (x, y) vertices; closed polylines do not repeat the start vertex.

    Closed polylines with fewer than 3 vertices are degenerate: constructible
    (a single-pixel mask traces to one) but rejected wherever a shape is needed.
    """

    points: np.ndarray
    closed: bool

    def __post_init__(self):
        p = np.asarray(self.points, dtype=np.float64)
        if p.ndim != 2 or p.shape[1] != 2 or p.shape[0] < 1:
            raise ValidationError("polyline points must be a non-empty (n, 2) array")
        if not np.all(np.isfinite(p)):
            raise ValidationError("polyline contains non-finite coordinates")
        if len(p) > 1:
            dup = np.all(p[1:] == p[:-1], axis=1)
            if np.any(dup):
                raise ValidationError("polyline has consecutive duplicate vertices")
            if self.closed and np.all(p[0] == p[-1]):
                raise ValidationError("closed polyline must not repeat its start vertex")
        p = np.ascontiguousarray(p)
        p.setflags(write=False)
        object.__setattr__(self, "points", p)

    def __len__(self) -> int:
        return len(self.points)


# Moore neighborhood in (row, col) offsets, clockwise on screen starting west.
_MOORE = ((0, -1), (-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1))
_MOORE_INDEX = {off: i for i, off in enumerate(_MOORE)}


def _signed_area(points: np.ndarray) -> float:
    x, y = points[:, 0], points[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def trace_boundary(mask: BinaryMask) -> Polyline:
    """Outer contour of the mask's largest 8-connected component.

    Moore-neighbor tracing with Jacob's stopping criterion, starting at the
    top-most then left-most boundary pixel. Vertices are boundary pixel
    centers. Holes are ignored. Output orientation is normalized to positive
    shoelace signed area in image coordinates (y down).
    """
    if mask.area == 0:
        raise EmptyMaskError(f"mask {mask.id!r} is empty")
    comp = largest_component(mask.bits)
    rows, cols = np.nonzero(comp)
    start = (int(rows[0]), int(cols[0]))  # scan order: topmost, then leftmost
    h, w = comp.shape

    def fg(pixel):
        r, c = pixel
        return 0 <= r < h and 0 <= c < w and comp[r, c]

    contour = [start]
    backtrack = (start[0], start[1] - 1)  # enter from the west; always background
    current = start
    first_next = None
    for _ in range(4 * h * w + 8):
        off = (backtrack[0] - current[0], backtrack[1] - current[1])
        scan = _MOORE_INDEX[off]
        nxt = None
        for step in range(1, 9):
            cand_off = _MOORE[(scan + step) % 8]
            cand = (current[0] + cand_off[0], current[1] + cand_off[1])
            if fg(cand):
                nxt = cand
                break
            backtrack = cand
        if nxt is None:
            break  # isolated pixel: single-vertex loop
        # Jacob's criterion: stop when the initial directed move out of the
        # start pixel is about to repeat.
        if current == start and first_next is not None and nxt == first_next:
            break
        if current == start and first_next is None:
            first_next = nxt
        contour.append(nxt)
        current = nxt
    else:
        raise RuntimeError("contour trace failed to terminate")

    if len(contour) > 1 and contour[-1] == contour[0]:
        contour.pop()
    pts = np.array([(c + 0.5, r + 0.5) for r, c in contour], dtype=np.float64)
    if len(pts) >= 3 and _signed_area(pts) < 0:
        pts = np.concatenate([pts[:1], pts[:0:-1]])
    return Polyline(points=pts, closed=True)


def _chain_distances(points: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Distance from each point to the segment a-b (clamped projection)."""
    ab = b - a
    denom = float(ab @ ab)
    if denom < 1e-24:
        return np.linalg.norm(points - a, axis=1)
    t = np.clip(((points - a) @ ab) / denom, 0.0, 1.0)
    proj = a + t[:, None] * ab
    return np.linalg.norm(points - proj, axis=1)


def _dp_open(points: np.ndarray, epsilon: float) -> list[int]:
    """Indices kept by Douglas-Peucker on an open chain (endpoints always kept)."""
    keep = {0, len(points) - 1}
    stack = [(0, len(points) - 1)]
    while stack:
        lo, hi = stack.pop()
        if hi - lo < 2:
            continue
        inner = points[lo + 1 : hi]
        d = _chain_distances(inner, points[lo], points[hi])
        imax = int(np.argmax(d))  # first occurrence on ties
        if d[imax] > epsilon:
            split = lo + 1 + imax
            keep.add(split)
            stack.append((lo, split))
            stack.append((split, hi))
    return sorted(keep)


def _farthest_pair(points: np.ndarray) -> tuple[int, int]:
    """Lexicographically first index pair at maximum Euclidean distance."""
    n = len(points)
    best = (-1.0, 0, 1)
    for i in range(n - 1):
        d2 = np.sum((points[i + 1 :] - points[i]) ** 2, axis=1)
        j = int(np.argmax(d2))
        if d2[j] > best[0]:
            best = (float(d2[j]), i, i + 1 + j)
    return best[1], best[2]


def douglas_peucker(polyline: Polyline, epsilon: float) -> Polyline:
    """Simplify a polyline; output vertices are a subsequence of the input.

    Every input vertex stays within `epsilon` of the simplified chain
    (point-to-segment distance). Closed inputs are split at the two mutually
    farthest vertices, each half simplified as an open chain, and rejoined
    (the output starts at the split vertex, a rotation of the input order).
    epsilon = 0 returns the input unchanged.
    """
    if epsilon < 0:
        raise ValidationError("epsilon must be >= 0")
    pts = polyline.points
    if epsilon == 0 or len(pts) <= 2:
        return Polyline(points=pts.copy(), closed=polyline.closed)
    if not polyline.closed:
        kept = _dp_open(pts, epsilon)
        return Polyline(points=pts[kept], closed=False)

    i, j = _farthest_pair(pts)
    rotated = np.roll(pts, -i, axis=0)
    split = j - i  # index of vertex j after rotation
    first = rotated[: split + 1]
    second = np.concatenate([rotated[split:], rotated[:1]])
    kept_first = _dp_open(first, epsilon)
    kept_second = _dp_open(second, epsilon)
    idx = kept_first + [split + k for k in kept_second[1:-1]]
    return Polyline(points=rotated[idx], closed=True)


def polyline_to_bezier(polyline: Polyline) -> np.ndarray:
    """Control points of a closed cubic path tracing the polyline exactly.

    One segment per polyline edge; interior control points sit at the thirds
    of each edge (straight-line degree elevation). Returns a (3n, 2) array
    where segment i is points[3i], points[3i+1], points[3i+2],
    points[(3i+3) % 3n].
    """
    if not polyline.closed or len(polyline) < 3:
        raise DegenerateShapeError("need a closed polyline with >= 3 vertices")
    v = polyline.points
    nxt = np.roll(v, -1, axis=0)
    out = np.empty((3 * len(v), 2), dtype=np.float64)
    out[0::3] = v
    out[1::3] = v + (nxt - v) / 3.0
    out[2::3] = v + 2.0 * (nxt - v) / 3.0
    return out


def _check_same_dims(a: BinaryMask, b: BinaryMask) -> None:
    if a.bits.shape != b.bits.shape:
        raise ShapeMismatchError(f"mask shapes differ: {a.bits.shape} vs {b.bits.shape}")


def jaccard(a: BinaryMask, b: BinaryMask) -> float:
    """|a and b| / |a or b|; 0.0 when the union is empty."""
    _check_same_dims(a, b)
    union = np.count_nonzero(a.bits | b.bits)
    if union == 0:
        return 0.0
    return np.count_nonzero(a.bits & b.bits) / union


def overlap_fraction(path_pixels: np.ndarray | BinaryMask, mask: BinaryMask) -> float:
    """|path and mask| / |path|; 0.0 for an empty path.

    path_pixels may be a raw boolean array (a rasterized path footprint) or a
    BinaryMask.
    """
    bits = path_pixels.bits if isinstance(path_pixels, BinaryMask) else \
        np.asarray(path_pixels, dtype=bool)
    if bits.shape != mask.bits.shape:
        raise ShapeMismatchError(
            f"path footprint {bits.shape} vs mask {mask.bits.shape}")
    covered = int(np.count_nonzero(bits))
    if covered == 0:
        return 0.0
    return np.count_nonzero(bits & mask.bits) / covered
