"""Scene model: filled closed cubic-Bezier paths ordered back-to-front.

Scenes and paths are immutable snapshots; the optimizer replaces them
wholesale instead of mutating in place, so a render pass can never observe
a half-updated state.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InvalidSceneError, ValidationError

KIND_STRUCTURE = "structure"
KIND_VISUAL = "visual"

# Control points may leave the canvas during optimization, but only this far:
# |coord| <= margin_factor * max(width, height).
MARGIN_FACTOR = 4.0


def _frozen_array(a, dtype=np.float64) -> np.ndarray:
    out = np.ascontiguousarray(np.asarray(a, dtype=dtype))
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class BezierPath:
    """A closed loop of cubic segments with a flat RGBA fill.

    points holds 3n control points for n segments: segment i runs through
    points[3i] (on-curve), points[3i+1], points[3i+2] (handles), and
    points[(3i+3) % 3n] (the next on-curve point). Closure is structural.
    """

    points: np.ndarray
    fill: np.ndarray
    layer: int
    kind: str
    uid: str
    frozen: bool = False
    source_mask_id: str | None = None

    def __post_init__(self):
        p = _frozen_array(self.points)
        if p.ndim != 2 or p.shape[1] != 2 or p.shape[0] % 3 != 0 or p.shape[0] < 9:
            raise ValidationError("path needs a (3n, 2) control-point array with n >= 3")
        if not np.all(np.isfinite(p)):
            raise ValidationError("path control points must be finite")
        f = _frozen_array(self.fill)
        if f.shape != (4,):
            raise ValidationError("fill must be RGBA")
        if not np.all(np.isfinite(f)) or f.min() < 0.0 or f.max() > 1.0:
            raise ValidationError("fill components must be in [0, 1]")
        if self.layer < 0:
            raise ValidationError("layer index must be >= 0")
        if self.kind not in (KIND_STRUCTURE, KIND_VISUAL):
            raise ValidationError(f"unknown path kind: {self.kind!r}")
        object.__setattr__(self, "points", p)
        object.__setattr__(self, "fill", f)

    @property
    def n_segments(self) -> int:
        return len(self.points) // 3

    def segment(self, i: int) -> np.ndarray:
        """The four control points of segment i, shape (4, 2)."""
        p = self.points
        m = len(p)
        return np.array([p[3 * i], p[3 * i + 1], p[3 * i + 2], p[(3 * i + 3) % m]])

    def with_points(self, points: np.ndarray) -> "BezierPath":
        return replace(self, points=_frozen_array(points))

    def with_fill(self, fill: np.ndarray) -> "BezierPath":
        return replace(self, fill=_frozen_array(fill))


@dataclass(frozen=True)
class Scene:
    """Canvas plus an ordered (back-to-front) tuple of paths."""

    width: int
    height: int
    background: np.ndarray
    paths: tuple[BezierPath, ...] = ()

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValidationError("canvas dimensions must be positive")
        bg = _frozen_array(self.background)
        if bg.shape != (3,) or not np.all(np.isfinite(bg)) or bg.min() < 0 or bg.max() > 1:
            raise ValidationError("background must be RGB in [0, 1]")
        object.__setattr__(self, "background", bg)
        object.__setattr__(self, "paths", tuple(self.paths))

    def validate(self) -> None:
        """Raise InvalidSceneError on any structural-invariant violation."""
        bound = MARGIN_FACTOR * max(self.width, self.height)
        last_layer = -1
        seen = set()
        for p in self.paths:
            if p.layer < last_layer:
                raise InvalidSceneError("layer indices must be non-decreasing in list order")
            last_layer = p.layer
            if np.abs(p.points).max() > bound:
                raise InvalidSceneError(
                    f"path {p.uid}: control point beyond {MARGIN_FACTOR}x canvas extent"
                )
            if p.uid in seen:
                raise InvalidSceneError(f"duplicate path uid {p.uid!r}")
            seen.add(p.uid)

    def with_paths(self, paths) -> "Scene":
        return replace(self, paths=tuple(paths))

    def max_layer(self) -> int:
        return max((p.layer for p in self.paths), default=-1)


@dataclass(frozen=True)
class RenderConfig:
    """Rendering model parameters.

    sigma is the logistic softness of the coverage edge in pixels; curves are
    flattened adaptively to flatten_tolerance pixels. Only the nonzero winding
    fill rule is supported; the field exists so serialized configs are explicit.
    """

    sigma: float = 1.0
    flatten_tolerance: float = 0.1
    fill_rule: str = "nonzero"

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValidationError("sigma must be positive")
        if self.flatten_tolerance <= 0:
            raise ValidationError("flatten tolerance must be positive")
        if self.fill_rule != "nonzero":
            raise ValidationError("only the nonzero winding rule is supported")


@dataclass
class ParamGradients:
    """Per-path gradients, parallel to scene.paths; zeros for frozen paths."""

    points: list[np.ndarray] = field(default_factory=list)
    fills: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def zeros_like(cls, scene: Scene) -> "ParamGradients":
        return cls(
            points=[np.zeros_like(p.points) for p in scene.paths],
            fills=[np.zeros(4) for _ in scene.paths],
        )

    def accumulate(self, other: "ParamGradients") -> None:
        for mine, theirs in zip(self.points, other.points):
            mine += theirs
        for mine, theirs in zip(self.fills, other.fills):
            mine += theirs


class UidAllocator:
    """Deterministic path-id source: p0000, p0001, ... in creation order."""

    def __init__(self):
        self._next = 0

    def take(self) -> str:
        uid = f"p{self._next:04d}"
        self._next += 1
        return uid
