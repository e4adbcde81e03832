"""SVG ingestion and serialization for the supported path subset.

Supported: <path d="..."> with M/m, L/l, C/c, Z/z commands. Line segments
are degree-elevated to equivalent cubics (inner points at 1/3 and 2/3)
so hand-drawn files load without preprocessing. Stroke width comes from
the path's stroke-width attribute (default 1.5); fill is ignored. A
viewBox, when present, maps user units onto the declared pixel canvas.

Path order and segment order within the file define point order, which in
turn defines the displacement field's positional encoding. Reordering
paths in an input file therefore changes training behavior.
"""

from __future__ import annotations

import re
import xml.etree.ElementTree as ET

import numpy as np

from .sketch import DEFAULT_CANVAS, DEFAULT_STROKE_WIDTH, Sketch, Stroke


class SvgParseError(ValueError):
    """Malformed or unsupported SVG input."""


class EmptySketchError(SvgParseError):
    """The document contains no drawable path segments."""


_NUMBER = re.compile(r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?")


def _strip_unit(value: str) -> float:
    m = _NUMBER.match(value.strip())
    if not m:
        raise SvgParseError(f"cannot parse length {value!r}")
    return float(m.group(0))


def _elevate_line(p0: np.ndarray, p1: np.ndarray) -> np.ndarray:
    """Degree-elevate a line to a cubic with inner points at 1/3 and 2/3."""
    return np.stack([p0, p0 + (p1 - p0) / 3.0, p0 + 2.0 * (p1 - p0) / 3.0, p1])


def _tokenize_path(d: str, byte_base: int) -> list[tuple[str, float, int]]:
    """Tokens as (kind, value, byte offset); kind is a command letter or 'n'."""
    tokens = []
    pos = 0
    while pos < len(d):
        ch = d[pos]
        if ch in " \t\r\n,":
            pos += 1
            continue
        if ch.isalpha():
            if ch not in "MmLlCcZz":
                raise SvgParseError(
                    f"unsupported path command '{ch}' at byte {byte_base + pos}"
                )
            tokens.append((ch, 0.0, byte_base + pos))
            pos += 1
            continue
        m = _NUMBER.match(d, pos)
        if not m:
            raise SvgParseError(
                f"unexpected character '{ch}' in path data at byte {byte_base + pos}"
            )
        tokens.append(("n", float(m.group(0)), byte_base + pos))
        pos = m.end()
    return tokens


def _parse_path_data(d: str, width: float, byte_base: int) -> list[Stroke]:
    tokens = _tokenize_path(d, byte_base)
    strokes: list[Stroke] = []
    current = np.zeros(2)
    subpath_start = np.zeros(2)
    started = False
    cmd = None
    cmd_offset = byte_base
    i = 0

    def read_numbers(count: int) -> np.ndarray:
        nonlocal i
        vals = []
        for _ in range(count):
            if i >= len(tokens) or tokens[i][0] != "n":
                raise SvgParseError(
                    f"expected {count} coordinates for '{cmd}' at byte {cmd_offset}"
                )
            vals.append(tokens[i][1])
            i += 1
        return np.array(vals)

    while i < len(tokens):
        kind, _, offset = tokens[i]
        if kind != "n":
            cmd, cmd_offset = kind, offset
            i += 1
            if cmd in "Zz":
                if started and not np.array_equal(current, subpath_start):
                    strokes.append(Stroke(_elevate_line(current, subpath_start), width))
                current = subpath_start.copy()
                cmd = None
            continue
        if cmd is None:
            raise SvgParseError(f"coordinates before any command at byte {offset}")
        relative = cmd.islower()
        if cmd in "Mm":
            p = read_numbers(2)
            current = current + p if relative else p
            subpath_start = current.copy()
            started = True
            # further coordinate pairs after a moveto are implicit linetos
            cmd = "l" if relative else "L"
        elif cmd in "Ll":
            if not started:
                raise SvgParseError(f"'{cmd}' before moveto at byte {cmd_offset}")
            p = read_numbers(2)
            p = current + p if relative else p
            strokes.append(Stroke(_elevate_line(current, p), width))
            current = p
        else:  # Cc
            if not started:
                raise SvgParseError(f"'{cmd}' before moveto at byte {cmd_offset}")
            coords = read_numbers(6).reshape(3, 2)
            if relative:
                coords = coords + current
            strokes.append(
                Stroke(np.concatenate([current[None], coords], axis=0), width)
            )
            current = coords[2]
    return strokes


def parse_svg(text: str) -> Sketch:
    """Parse an SVG document into a Sketch.

    Raises SvgParseError for unsupported commands (with command letter and
    byte offset) and EmptySketchError when no segments are found.
    """
    try:
        root = ET.fromstring(text)
    except ET.ParseError as e:
        raise SvgParseError(f"not well-formed XML: {e}") from e

    view_box = root.get("viewBox")
    width_attr = root.get("width")
    height_attr = root.get("height")
    if width_attr and height_attr:
        canvas = (int(round(_strip_unit(height_attr))), int(round(_strip_unit(width_attr))))
    elif view_box:
        vb = [float(v) for v in view_box.replace(",", " ").split()]
        canvas = (int(round(vb[3])), int(round(vb[2])))
    else:
        canvas = DEFAULT_CANVAS

    strokes: list[Stroke] = []
    for elem in root.iter():
        tag = elem.tag.rsplit("}", 1)[-1]
        if tag != "path":
            continue
        d = elem.get("d")
        if d is None:
            continue
        width = DEFAULT_STROKE_WIDTH
        sw = elem.get("stroke-width")
        if sw is not None:
            width = _strip_unit(sw)
        byte_base = text.find(d) if d in text else 0
        strokes.extend(_parse_path_data(d, width, byte_base))

    if not strokes:
        raise EmptySketchError("document contains no path segments")

    if view_box:
        vb = [float(v) for v in view_box.replace(",", " ").split()]
        min_xy = np.array(vb[:2])
        size = np.array(vb[2:])
        h, w = canvas
        scale = np.array([w, h]) / size
        if not np.allclose(scale, 1.0) or not np.allclose(min_xy, 0.0):
            strokes = [
                Stroke((s.points - min_xy) * scale, s.width) for s in strokes
            ]
    return Sketch(tuple(strokes), canvas)


def _fmt(v: float) -> str:
    return f"{v:.8f}".rstrip("0").rstrip(".")


def write_svg(sketch: Sketch) -> str:
    """Serialize a sketch; parse_svg(write_svg(s)) reproduces s to 1e-6."""
    h, w = sketch.canvas
    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" '
        f'viewBox="0 0 {w} {h}">',
    ]
    for s in sketch.strokes:
        p = s.points
        d = (
            f"M {_fmt(p[0, 0])} {_fmt(p[0, 1])} "
            f"C {_fmt(p[1, 0])} {_fmt(p[1, 1])}, "
            f"{_fmt(p[2, 0])} {_fmt(p[2, 1])}, "
            f"{_fmt(p[3, 0])} {_fmt(p[3, 1])}"
        )
        lines.append(
            f'  <path d="{d}" fill="none" stroke="black" '
            f'stroke-width="{_fmt(s.width)}" stroke-linecap="round"/>'
        )
    lines.append("</svg>")
    return "\n".join(lines) + "\n"
