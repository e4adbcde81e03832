from __future__ import annotations

import numpy as np
import pytest

from sketchmotion.sketch import Sketch, Stroke


def random_sketch(
    rng: np.random.Generator,
    n_strokes: int = 4,
    canvas: tuple[int, int] = (256, 256),
    margin: float = 40.0,
    width: float = 1.5,
) -> Sketch:
    h, w = canvas
    lo = np.array([margin, margin])
    hi = np.array([w - margin, h - margin])
    strokes = tuple(
        Stroke(rng.uniform(lo, hi, size=(4, 2)), width) for _ in range(n_strokes)
    )
    return Sketch(strokes, canvas)


def smooth_sketch(
    rng: np.random.Generator,
    n_strokes: int = 4,
    canvas: tuple[int, int] = (256, 256),
    margin: float = 40.0,
    width: float = 3.0,
    length_range: tuple[float, float] | None = None,
) -> Sketch:
    """Random gently curved open strokes, like machine-generated sketches.

    Control points follow a random chord with moderate lateral deviation,
    so strokes do not double back on themselves and the coverage band
    stays free of near-self distance ridges. Used by the gradient-check
    suites; width >= 2*aa keeps coverage saturated (flat) at stroke cores.
    """
    h, w = canvas
    if length_range is None:
        usable = min(h, w) - 2 * margin
        length_range = (min(60.0, 0.4 * usable), min(150.0, 0.9 * usable))
    strokes = []
    for _ in range(n_strokes):
        for _attempt in range(1000):
            p0 = rng.uniform([margin, margin], [w - margin, h - margin])
            phi = rng.uniform(0, 2 * np.pi)
            length = rng.uniform(*length_range)
            p3 = p0 + length * np.array([np.cos(phi), np.sin(phi)])
            if margin <= p3[0] <= w - margin and margin <= p3[1] <= h - margin:
                break
        else:
            p3 = np.clip(p3, margin, [w - margin, h - margin])
        d = (p3 - p0) / 3.0
        lat = np.array([-d[1], d[0]]) / np.linalg.norm(d)
        p1 = p0 + d + lat * rng.normal(0, length / 8)
        p2 = p0 + 2 * d + lat * rng.normal(0, length / 8)
        strokes.append(Stroke(np.stack([p0, p1, p2, p3]), width))
    return Sketch(tuple(strokes), canvas)


def rail_sketch(
    canvas: tuple[int, int] = (256, 256),
    n: int = 6,
    x0: float = 30.0,
    x1: float = 180.0,
    slope: float = 4.0,
    width: float = 1.5,
) -> Sketch:
    """Stacked, gently sloped strokes in separate y-bands.

    The translation fixture: a horizontally shifted copy overlaps each
    stroke's own band only, so the pull toward the shifted copy is
    unambiguous at every offset along the journey.
    """
    strokes = []
    h, _ = canvas
    ys = np.linspace(45.0, h - 46.0, n)
    for i, y in enumerate(ys):
        s = slope if i % 2 == 0 else -slope
        bend = 3.0 * (1 if i % 2 else -1)
        p0 = np.array([x0, y - s / 2])
        p3 = np.array([x1, y + s / 2])
        p1 = p0 + np.array([(x1 - x0) / 3.0, bend])
        p2 = p3 - np.array([(x1 - x0) / 3.0, bend])
        strokes.append(Stroke(np.stack([p0, p1, p2, p3]), width))
    return Sketch(tuple(strokes), canvas)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
