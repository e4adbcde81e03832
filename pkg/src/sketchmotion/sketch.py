"""Vector sketch representation: strokes, control points and per-frame displacements.

A sketch is an ordered list of cubic Bezier strokes over a white canvas.
Point order is significant: it is stroke-major (4 consecutive points per
stroke, in file order) and feeds the displacement field's positional
encoding, so reordering strokes changes what the field learns.

Coordinates are stored in canvas pixel units, x right / y down, matching
the SVG and raster conventions (canonical canvas is 256x256).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

DEFAULT_CANVAS = (256, 256)
DEFAULT_STROKE_WIDTH = 1.5


class ControlPoint(NamedTuple):
    x: float
    y: float


def _as_point_array(points, n: int) -> np.ndarray:
    arr = np.asarray(points, dtype=np.float64)
    if arr.shape != (n, 2):
        raise ValueError(f"expected {n} points of shape ({n}, 2), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("control points must be finite")
    return arr


@dataclass(frozen=True)
class Stroke:
    """One cubic Bezier curve: exactly 4 control points and a stroke width."""

    points: np.ndarray
    width: float = DEFAULT_STROKE_WIDTH

    def __post_init__(self):
        arr = _as_point_array(self.points, 4)
        arr.setflags(write=False)
        object.__setattr__(self, "points", arr)
        if not (np.isfinite(self.width) and self.width > 0):
            raise ValueError(f"stroke width must be positive, got {self.width}")

    def control_points(self) -> list[ControlPoint]:
        return [ControlPoint(float(x), float(y)) for x, y in self.points]


@dataclass(frozen=True)
class Sketch:
    """An ordered collection of strokes on an (h, w) pixel canvas."""

    strokes: tuple[Stroke, ...]
    canvas: tuple[int, int] = DEFAULT_CANVAS

    def __post_init__(self):
        object.__setattr__(self, "strokes", tuple(self.strokes))
        h, w = self.canvas
        if h <= 0 or w <= 0:
            raise ValueError(f"canvas must be positive, got {self.canvas}")
        object.__setattr__(self, "canvas", (int(h), int(w)))

    @property
    def stroke_count(self) -> int:
        return len(self.strokes)

    @property
    def point_count(self) -> int:
        return 4 * len(self.strokes)

    @property
    def widths(self) -> np.ndarray:
        return np.array([s.width for s in self.strokes], dtype=np.float64)

    def points(self) -> np.ndarray:
        """All control points as an (N, 2) array, stroke-major order."""
        if not self.strokes:
            return np.zeros((0, 2), dtype=np.float64)
        return np.concatenate([s.points for s in self.strokes], axis=0)

    def with_points(self, points: np.ndarray) -> "Sketch":
        """Same strokes, widths and canvas, with relocated control points."""
        arr = _as_point_array(points, self.point_count)
        strokes = tuple(
            Stroke(arr[4 * i : 4 * i + 4], s.width) for i, s in enumerate(self.strokes)
        )
        return Sketch(strokes, self.canvas)

    def center(self) -> tuple[float, float]:
        """Canvas center (x, y); the default pivot for global transforms."""
        h, w = self.canvas
        return (w / 2.0, h / 2.0)


@dataclass(frozen=True)
class MotionSequence:
    """A sketch plus k per-frame point displacements.

    Frame j's point set is base.points() + displacements[j]; stroke count,
    widths and point order never change across frames.
    """

    base: Sketch
    displacements: np.ndarray = field(repr=False)

    def __post_init__(self):
        dz = np.asarray(self.displacements, dtype=np.float64)
        if dz.ndim != 3 or dz.shape[1:] != (self.base.point_count, 2):
            raise ValueError(
                f"displacements must have shape (k, {self.base.point_count}, 2), "
                f"got {dz.shape}"
            )
        if not np.all(np.isfinite(dz)):
            raise ValueError("displacements must be finite")
        dz = dz.copy()
        dz.setflags(write=False)
        object.__setattr__(self, "displacements", dz)

    @classmethod
    def static(cls, base: Sketch, frames: int) -> "MotionSequence":
        """k identical copies of the base sketch (zero displacement)."""
        return cls(base, np.zeros((frames, base.point_count, 2)))

    @property
    def frame_count(self) -> int:
        return self.displacements.shape[0]

    def frame_points(self, j: int) -> np.ndarray:
        if not 0 <= j < self.frame_count:
            raise IndexError(f"frame {j} out of range [0, {self.frame_count})")
        return self.base.points() + self.displacements[j]

    def all_points(self) -> np.ndarray:
        """Per-frame point sets, shape (k, N, 2)."""
        return self.base.points()[None, :, :] + self.displacements

    def materialize_frame(self, j: int) -> Sketch:
        """Frame j as a standalone sketch."""
        return self.base.with_points(self.frame_points(j))


def materialize_frame(seq: MotionSequence, j: int) -> Sketch:
    return seq.materialize_frame(j)
