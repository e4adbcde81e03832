"""Differentiable video augmentation: random crop + mild perspective warp.

One crop (area fraction uniform in [0.81, 1.0], resized back to full
resolution) and one perspective warp (corner jitter up to 5% of the side)
are sampled per training step and applied identically to every frame, so
the warp itself injects no fake motion. Both are resampling operations;
they compose into a single homography evaluated with one bilinear pass,
which keeps the map exactly linear in the input pixels and makes the
backward pass a plain scatter of the sampling weights.

Samples falling outside the source frame read the white background (1.0)
and propagate no gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

CROP_AREA_MIN = 0.81
CROP_AREA_MAX = 1.0
PERSPECTIVE_JITTER = 0.05
PAD_VALUE = 1.0


@dataclass
class AugmentMap:
    """Frozen sampling grid of one augmentation draw (shared by all frames)."""

    shape: tuple[int, int]
    idx00: np.ndarray  # (h*w,) flat source index of the top-left neighbor
    w00: np.ndarray
    w01: np.ndarray
    w10: np.ndarray
    w11: np.ndarray
    inside: np.ndarray  # (h*w,) bool, sample falls inside the source frame


def _solve_homography(dst: np.ndarray, src: np.ndarray) -> np.ndarray:
    """3x3 H with src ~ H @ dst (both (4, 2) corner lists)."""
    rows = []
    rhs = []
    for (xd, yd), (xs, ys) in zip(dst, src):
        rows.append([xd, yd, 1, 0, 0, 0, -xs * xd, -xs * yd])
        rhs.append(xs)
        rows.append([0, 0, 0, xd, yd, 1, -ys * xd, -ys * yd])
        rhs.append(ys)
    h = np.linalg.solve(np.array(rows), np.array(rhs))
    return np.append(h, 1.0).reshape(3, 3)


def sample_augment(rng: np.random.Generator, shape: tuple[int, int]) -> np.ndarray:
    """Draw crop + perspective parameters; returns the combined 3x3 map
    taking output pixel coordinates to source coordinates."""
    h, w = shape
    area = rng.uniform(CROP_AREA_MIN, CROP_AREA_MAX)
    side = np.sqrt(area)
    ox = rng.uniform(0.0, w * (1.0 - side))
    oy = rng.uniform(0.0, h * (1.0 - side))
    crop = np.array([[side, 0.0, ox], [0.0, side, oy], [0.0, 0.0, 1.0]])

    corners = np.array([[0.0, 0.0], [w, 0.0], [w, h], [0.0, h]])
    jitter = rng.uniform(
        -PERSPECTIVE_JITTER, PERSPECTIVE_JITTER, size=(4, 2)
    ) * np.array([w, h])
    persp = _solve_homography(corners, corners + jitter)
    return crop @ persp


def build_map(H: np.ndarray, shape: tuple[int, int]) -> AugmentMap:
    """Precompute bilinear indices/weights for warping by H."""
    h, w = shape
    ys, xs = np.mgrid[0:h, 0:w]
    out = np.stack([xs.ravel() + 0.5, ys.ravel() + 0.5, np.ones(h * w)])
    src = H @ out
    sx = src[0] / src[2] - 0.5
    sy = src[1] / src[2] - 0.5

    inside = (sx >= 0) & (sx <= w - 1) & (sy >= 0) & (sy <= h - 1)
    # clamp the base corner to w-2 so a sample exactly on the last center
    # resolves to weight 1.0 on that pixel (fx = 1 selects the +1 neighbor)
    x0c = np.clip(np.floor(sx), 0, w - 2).astype(np.int64)
    y0c = np.clip(np.floor(sy), 0, h - 2).astype(np.int64)
    fx = np.clip(sx - x0c, 0.0, 1.0)
    fy = np.clip(sy - y0c, 0.0, 1.0)
    idx00 = y0c * w + x0c
    return AugmentMap(
        shape=shape,
        idx00=idx00,
        w00=(1 - fx) * (1 - fy),
        w01=fx * (1 - fy),
        w10=(1 - fx) * fy,
        w11=fx * fy,
        inside=inside,
    )


def apply_augment(video: np.ndarray, amap: AugmentMap) -> np.ndarray:
    """Warp every frame through the sampling map; (k, h, w) -> (k, h, w)."""
    k, h, w = video.shape
    if (h, w) != amap.shape:
        raise ValueError(f"video {(h, w)} does not match map {amap.shape}")
    flat = video.reshape(k, -1)
    i00 = amap.idx00
    out = (
        flat[:, i00] * amap.w00
        + flat[:, i00 + 1] * amap.w01
        + flat[:, i00 + w] * amap.w10
        + flat[:, i00 + w + 1] * amap.w11
    )
    out = np.where(amap.inside, out, PAD_VALUE)
    return out.reshape(k, h, w)


def augment_backward(upstream: np.ndarray, amap: AugmentMap) -> np.ndarray:
    """Scatter dL/d(warped) back to the source frames through the sampler."""
    k, h, w = upstream.shape
    if (h, w) != amap.shape:
        raise ValueError(f"upstream {(h, w)} does not match map {amap.shape}")
    up = np.where(amap.inside, upstream.reshape(k, -1), 0.0)
    i00 = amap.idx00
    grad = np.zeros((k, h * w))
    for offset, wgt in (
        (0, amap.w00),
        (1, amap.w01),
        (w, amap.w10),
        (w + 1, amap.w11),
    ):
        idx = i00 + offset
        for f in range(k):
            grad[f] += np.bincount(idx, weights=up[f] * wgt, minlength=h * w)
    return grad.reshape(k, h, w)
