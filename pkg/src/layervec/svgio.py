"""Scene persistence: bit-exact JSON and an SVG dialect with layer groups.

The JSON form keeps full float precision and a stable key order, so saving
the same scene twice yields identical bytes. The SVG export writes one
group per layer with flat hex fills and 3-decimal coordinates; import
accepts exactly that dialect and nothing else.
"""

from __future__ import annotations

import json
import re
import xml.etree.ElementTree as ET

import numpy as np

from .errors import InvalidSceneError, UnsupportedSvgError
from .scene import BezierPath, Scene

SCHEMA_VERSION = 1

_SVG_NS = "http://www.w3.org/2000/svg"


# ---------------------------------------------------------------------------
# JSON


def scene_to_dict(scene: Scene) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "width": scene.width,
        "height": scene.height,
        "background": [float(v) for v in scene.background],
        "paths": [
            {
                "uid": p.uid,
                "layer": p.layer,
                "kind": p.kind,
                "frozen": p.frozen,
                "source_mask_id": p.source_mask_id,
                "fill": [float(v) for v in p.fill],
                "points": [[float(x), float(y)] for x, y in p.points],
            }
            for p in scene.paths
        ],
    }


def scene_from_dict(doc: dict) -> Scene:
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise InvalidSceneError(
            f"unsupported scene schema version: {doc.get('schema_version')!r}")
    paths = tuple(
        BezierPath(points=np.array(e["points"], dtype=np.float64),
                   fill=np.array(e["fill"], dtype=np.float64),
                   layer=int(e["layer"]), kind=e["kind"], uid=e["uid"],
                   frozen=bool(e.get("frozen", False)),
                   source_mask_id=e.get("source_mask_id"))
        for e in doc["paths"]
    )
    scene = Scene(width=int(doc["width"]), height=int(doc["height"]),
                  background=np.array(doc["background"], dtype=np.float64),
                  paths=paths)
    scene.validate()
    return scene


def save_scene_json(scene: Scene, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(scene_to_dict(scene), fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_scene_json(path: str) -> Scene:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InvalidSceneError(f"bad scene file: {exc}") from exc
    return scene_from_dict(doc)


# ---------------------------------------------------------------------------
# SVG export


def _hex_color(rgb: np.ndarray) -> str:
    r, g, b = (int(round(float(v) * 255)) for v in rgb[:3])
    return f"#{r:02X}{g:02X}{b:02X}"


def _fmt(v: float) -> str:
    return f"{v:.3f}"


def path_d(path: BezierPath) -> str:
    """The `d` attribute: M start, one C per segment, closing Z."""
    pts = path.points
    parts = [f"M {_fmt(pts[0, 0])} {_fmt(pts[0, 1])}"]
    n = path.n_segments
    for i in range(n):
        c1 = pts[3 * i + 1]
        c2 = pts[3 * i + 2]
        end = pts[(3 * i + 3) % len(pts)]
        parts.append(f"C {_fmt(c1[0])} {_fmt(c1[1])} {_fmt(c2[0])} {_fmt(c2[1])} "
                     f"{_fmt(end[0])} {_fmt(end[1])}")
    parts.append("Z")
    return " ".join(parts)


def export_svg(scene: Scene, path: str) -> None:
    scene.validate()
    lines = [
        f'<svg xmlns="{_SVG_NS}" width="{scene.width}" height="{scene.height}" '
        f'viewBox="0 0 {scene.width} {scene.height}" '
        f'data-background="{_hex_color(scene.background)}">'
    ]
    by_layer: dict[int, list[BezierPath]] = {}
    for p in scene.paths:
        by_layer.setdefault(p.layer, []).append(p)
    for layer in sorted(by_layer):
        paths = by_layer[layer]
        kinds = {p.kind for p in paths}
        kind = kinds.pop() if len(kinds) == 1 else "mixed"
        lines.append(f'  <g id="layer-{layer}" data-kind="{kind}">')
        for p in paths:
            attrs = [
                f'd="{path_d(p)}"',
                f'fill="{_hex_color(p.fill)}"',
                f'fill-opacity="{_fmt(float(p.fill[3]))}"',
                f'data-uid="{p.uid}"',
                f'data-kind="{p.kind}"',
                f'data-frozen="{"true" if p.frozen else "false"}"',
            ]
            if p.source_mask_id is not None:
                attrs.append(f'data-source-mask="{p.source_mask_id}"')
            lines.append(f'    <path {" ".join(attrs)}/>')
        lines.append("  </g>")
    lines.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# SVG import (own dialect only)


def _parse_hex(value: str) -> np.ndarray:
    m = re.fullmatch(r"#([0-9a-fA-F]{6})", value.strip())
    if not m:
        raise UnsupportedSvgError(f"fill color {value!r}")
    raw = m.group(1)
    return np.array([int(raw[i:i + 2], 16) / 255.0 for i in (0, 2, 4)])


_NUM = r"[-+]?\d*\.?\d+(?:[eE][-+]?\d+)?"


def _parse_d(d: str) -> np.ndarray:
    tokens = d.strip()
    m = re.fullmatch(
        rf"M\s+({_NUM})\s+({_NUM})\s+((?:C(?:\s+{_NUM}){{6}}\s*)+)Z", tokens)
    if m is None:
        raise UnsupportedSvgError(f"path data {d[:50]!r}")
    start = [float(m.group(1)), float(m.group(2))]
    coords = [float(v) for v in re.findall(_NUM, m.group(3))]
    segs = [coords[i:i + 6] for i in range(0, len(coords), 6)]
    pts = [start]
    for c1x, c1y, c2x, c2y, ex, ey in segs:
        pts.append([c1x, c1y])
        pts.append([c2x, c2y])
        pts.append([ex, ey])
    closing = np.array(pts[-1])
    if not np.allclose(closing, np.array(start), atol=1e-9):
        raise UnsupportedSvgError("open path (last endpoint differs from start)")
    return np.array(pts[:-1], dtype=np.float64)


def _local(tag: str) -> str:
    return tag.rsplit("}", 1)[-1]


def import_svg(path: str) -> Scene:
    """Read back an SVG produced by export_svg; anything else is rejected."""
    try:
        tree = ET.parse(path)
    except ET.ParseError as exc:
        raise UnsupportedSvgError(f"not parseable XML: {exc}") from exc
    root = tree.getroot()
    if _local(root.tag) != "svg":
        raise UnsupportedSvgError(f"root element <{_local(root.tag)}>")
    try:
        width = int(float(root.get("width")))
        height = int(float(root.get("height")))
    except (TypeError, ValueError) as exc:
        raise UnsupportedSvgError("missing width/height") from exc
    bg_attr = root.get("data-background")
    background = _parse_hex(bg_attr) if bg_attr else np.ones(3)

    paths: list[BezierPath] = []
    counter = 0
    for group in root:
        if _local(group.tag) != "g":
            raise UnsupportedSvgError(f"element <{_local(group.tag)}>")
        if group.get("transform"):
            raise UnsupportedSvgError("transform attribute")
        gid = group.get("id", "")
        m = re.fullmatch(r"layer-(\d+)", gid)
        if not m:
            raise UnsupportedSvgError(f"group id {gid!r}")
        layer = int(m.group(1))
        for el in group:
            if _local(el.tag) != "path":
                raise UnsupportedSvgError(f"element <{_local(el.tag)}>")
            if el.get("transform"):
                raise UnsupportedSvgError("transform attribute")
            points = _parse_d(el.get("d", ""))
            rgb = _parse_hex(el.get("fill", ""))
            alpha = float(el.get("fill-opacity", "1"))
            uid = el.get("data-uid") or f"svg{counter:04d}"
            counter += 1
            paths.append(BezierPath(
                points=points,
                fill=np.concatenate([rgb, [alpha]]),
                layer=layer,
                kind=el.get("data-kind", "visual"),
                uid=uid,
                frozen=el.get("data-frozen") == "true",
                source_mask_id=el.get("data-source-mask")))
    paths.sort(key=lambda p: p.layer)
    scene = Scene(width=width, height=height, background=background,
                  paths=tuple(paths))
    scene.validate()
    return scene
