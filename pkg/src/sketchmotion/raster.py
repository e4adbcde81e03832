"""Differentiable stroke rasterizer.

Frames are grayscale float grids in [0, 1], 1.0 = white background and
0.0 = full ink. A pixel's value is 1 - softcoverage, where softcoverage is
a smoothly saturated ramp in the distance d from the pixel center to the
nearest flattened stroke segment:

    softcoverage = smoothstep(clamp01((width/2 + aa_width - d) / (2 * aa_width)))

with smoothstep(x) = x^2 (3 - 2x). The smooth saturation makes coverage C1
in d (zero slope entering and leaving the support band), which keeps
finite-difference gradient checks clean and tracks a box-filtered hard
edge noticeably closer than a plain linear ramp.

Overlapping strokes combine by max coverage (ties go to the first stroke
in sketch order). The backward pass returns the exact gradient of
sum(upstream * frame) w.r.t. the control points, treating the adaptive
subdivision parameters chosen in the forward pass as constants: every
polyline vertex is then a fixed Bernstein combination of its stroke's four
control points, so the chain pixel -> coverage -> segment distance ->
vertices -> control points is closed-form.

All per-pixel work is bounded by inflated segment bounding boxes and runs
as flat numpy array passes; no Python loop touches pixels or segments.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .geometry import DEFAULT_FLATTEN_TOL, bernstein_weights, flatten_curves
from .sketch import MotionSequence, Sketch

DEFAULT_AA_WIDTH = 1.0


def validate_frame(frame: np.ndarray) -> None:
    if frame.ndim != 2:
        raise ValueError(f"frame must be 2-D, got shape {frame.shape}")
    if frame.size and (frame.min() < 0.0 or frame.max() > 1.0):
        raise ValueError("frame values must lie in [0, 1]")


@dataclass
class RenderContext:
    """Everything the backward pass needs from one forward render."""

    frames: int
    points: int
    canvas: tuple[int, int]
    aa_width: float
    # flattening map (frozen subdivision)
    vertex_curve: np.ndarray  # (V,) curve id per polyline vertex
    vertex_weights: np.ndarray  # (V, 4) Bernstein weights at the vertex params
    seg_a: np.ndarray  # (T,) start vertex index per segment
    seg_b: np.ndarray  # (T,) end vertex index
    seg_ax: np.ndarray  # (T,) segment endpoint coordinates
    seg_ay: np.ndarray
    seg_abx: np.ndarray  # (T,) endpoint deltas
    seg_aby: np.ndarray
    seg_radius: np.ndarray  # (T,) width/2 + aa_width
    # surviving pixel/segment pairs (coverage > 0)
    pair_seg: np.ndarray  # (P,) segment index
    pair_pid: np.ndarray  # (P,) flat pixel index into (k*h*w)
    pair_t: np.ndarray  # (P,) clamped projection parameter
    pair_lin: np.ndarray  # (P,) linear ramp value before smooth saturation
    pair_cov: np.ndarray  # (P,) soft coverage
    max_cov: np.ndarray  # (k*h*w,) winning coverage per pixel


def _render_batch(
    points: np.ndarray,
    widths: np.ndarray,
    canvas: tuple[int, int],
    aa_width: float,
    tol: float,
) -> tuple[np.ndarray, RenderContext]:
    """Render k frames of point sets at once; returns (video, context)."""
    k, n, _ = points.shape
    h, w = canvas
    n_strokes = n // 4
    if n != 4 * n_strokes:
        raise ValueError(f"point count {n} is not a multiple of 4")

    ctrl = points.reshape(k * n_strokes, 4, 2)
    us, offsets = flatten_curves(ctrl, tol)
    counts = np.diff(offsets)
    vcurve = np.repeat(np.arange(len(ctrl)), counts)
    weights = bernstein_weights(us)
    verts = np.einsum("vc,vcd->vd", weights, ctrl[vcurve])

    # consecutive vertex pairs within each curve
    is_last = np.zeros(len(us), dtype=bool)
    is_last[offsets[1:] - 1] = True
    seg_a = np.flatnonzero(~is_last)
    seg_b = seg_a + 1
    seg_curve = vcurve[seg_a]

    ax, ay = verts[seg_a, 0], verts[seg_a, 1]
    bx, by = verts[seg_b, 0], verts[seg_b, 1]
    abx, aby = bx - ax, by - ay

    radius = widths[seg_curve % n_strokes] / 2.0 + aa_width

    # exact integer bounding boxes (pixel centers within radius), canvas-clipped
    x0 = np.clip(np.ceil(np.minimum(ax, bx) - radius - 0.5), 0, w).astype(np.int32)
    x1 = np.clip(np.floor(np.maximum(ax, bx) + radius - 0.5) + 1, 0, w).astype(np.int32)
    y0 = np.clip(np.ceil(np.minimum(ay, by) - radius - 0.5), 0, h).astype(np.int32)
    y1 = np.clip(np.floor(np.maximum(ay, by) + radius - 0.5) + 1, 0, h).astype(np.int32)
    nx, ny = np.maximum(x1 - x0, 0), np.maximum(y1 - y0, 0)
    npix = (nx * ny).astype(np.int64)

    total = int(npix.sum())
    idx_dtype = np.int32 if total < 2**31 else np.int64
    pair_seg = np.repeat(np.arange(len(seg_a), dtype=np.int32), npix)
    first = np.concatenate([[0], np.cumsum(npix)[:-1]]).astype(idx_dtype)
    local = np.arange(total, dtype=idx_dtype) - np.repeat(first, npix)
    nxp = nx[pair_seg]
    px = (x0[pair_seg] + local % nxp).astype(np.int32)
    py = (y0[pair_seg] + local // nxp).astype(np.int32)

    aqx = px - ax[pair_seg] + 0.5
    aqy = py - ay[pair_seg] + 0.5
    denom = abx * abx + aby * aby
    inv_denom = np.where(denom > 0.0, 1.0 / np.where(denom > 0.0, denom, 1.0), 0.0)
    t = np.clip(
        (aqx * abx[pair_seg] + aqy * aby[pair_seg]) * inv_denom[pair_seg], 0.0, 1.0
    )
    dx = aqx - t * abx[pair_seg]
    dy = aqy - t * aby[pair_seg]
    d2 = dx * dx + dy * dy

    keep = d2 < (radius * radius)[pair_seg]
    pair_seg, t = pair_seg[keep], t[keep]
    d = np.sqrt(d2[keep])
    lin = np.minimum((radius[pair_seg] - d) / (2.0 * aa_width), 1.0)
    cov = lin * lin * (3.0 - 2.0 * lin)
    frame_of_seg = (seg_curve // n_strokes).astype(np.int64)
    pid = (frame_of_seg[pair_seg] * h + py[keep]) * w + px[keep]

    max_cov = np.zeros(k * h * w)
    np.maximum.at(max_cov, pid, cov)
    video = 1.0 - max_cov.reshape(k, h, w)

    ctx = RenderContext(
        frames=k,
        points=n,
        canvas=(h, w),
        aa_width=aa_width,
        vertex_curve=vcurve,
        vertex_weights=weights,
        seg_a=seg_a,
        seg_b=seg_b,
        seg_ax=ax,
        seg_ay=ay,
        seg_abx=abx,
        seg_aby=aby,
        seg_radius=radius,
        pair_seg=pair_seg,
        pair_pid=pid,
        pair_t=t,
        pair_lin=lin,
        pair_cov=cov,
        max_cov=max_cov,
    )
    return video, ctx


def _backward_batch(ctx: RenderContext, upstream: np.ndarray) -> np.ndarray:
    """Gradient of sum(upstream * video) w.r.t. the (k, N, 2) input points."""
    k, n = ctx.frames, ctx.points
    h, w = ctx.canvas
    if upstream.shape != (k, h, w):
        raise ValueError(f"upstream shape {upstream.shape} != video shape {(k, h, w)}")

    # Gradient flows only through unsaturated winners of the per-pixel max.
    cand = (ctx.pair_cov < 1.0) & (ctx.pair_cov == ctx.max_cov[ctx.pair_pid])
    idx = np.flatnonzero(cand)
    n_curves = k * (n // 4)
    grads = np.zeros((n_curves, 4, 2))
    if len(idx):
        # ties at equal coverage resolve to the earliest pair = first stroke
        best = np.full(k * h * w, len(ctx.pair_cov), dtype=np.int64)
        np.minimum.at(best, ctx.pair_pid[idx], idx)
        win = idx[best[ctx.pair_pid[idx]] == idx]

        pid = ctx.pair_pid[win]
        sg = ctx.pair_seg[win]
        t = ctx.pair_t[win]
        lin = ctx.pair_lin[win]
        d = ctx.seg_radius[sg] - 2.0 * ctx.aa_width * lin  # invert the ramp
        ok = d > 1e-12  # on-centerline pixels have no defined direction
        pid, sg, t, lin, d = pid[ok], sg[ok], t[ok], lin[ok], d[ok]

        qx = pid % w + 0.5
        qy = (pid // w) % h + 0.5
        cx = ctx.seg_ax[sg] + t * ctx.seg_abx[sg]
        cy = ctx.seg_ay[sg] + t * ctx.seg_aby[sg]
        # dF/dd = smoothstep'(lin)/(2*aa); endpoint grads via the projection
        g_d = (
            upstream.reshape(-1)[pid]
            * (6.0 * lin * (1.0 - lin))
            / (2.0 * ctx.aa_width)
        )
        ux = (cx - qx) / d
        uy = (cy - qy) / d

        vg_x = np.zeros(len(ctx.vertex_curve))
        vg_y = np.zeros(len(ctx.vertex_curve))
        np.add.at(vg_x, ctx.seg_a[sg], g_d * (1.0 - t) * ux)
        np.add.at(vg_y, ctx.seg_a[sg], g_d * (1.0 - t) * uy)
        np.add.at(vg_x, ctx.seg_b[sg], g_d * t * ux)
        np.add.at(vg_y, ctx.seg_b[sg], g_d * t * uy)

        for c in range(4):
            wc = ctx.vertex_weights[:, c]
            grads[:, c, 0] = np.bincount(
                ctx.vertex_curve, weights=wc * vg_x, minlength=n_curves
            )
            grads[:, c, 1] = np.bincount(
                ctx.vertex_curve, weights=wc * vg_y, minlength=n_curves
            )
    return grads.reshape(k, n, 2)


def _chunks(k: int, threads: int) -> list[range]:
    threads = max(1, min(threads, k)) if k else 1
    bounds = np.linspace(0, k, threads + 1).astype(int)
    return [range(bounds[i], bounds[i + 1]) for i in range(threads) if bounds[i + 1] > bounds[i]]


class VideoRenderer:
    """Forward/backward rendering of a k-frame point tensor.

    Frames are independent, so chunks of frames may render on worker
    threads; gradients accumulate per frame with no shared mutable state.
    """

    def __init__(
        self,
        widths: np.ndarray,
        canvas: tuple[int, int],
        aa_width: float = DEFAULT_AA_WIDTH,
        tol: float = DEFAULT_FLATTEN_TOL,
        threads: int = 1,
    ):
        if aa_width <= 0:
            raise ValueError(f"aa_width must be positive, got {aa_width}")
        self.widths = np.asarray(widths, dtype=np.float64)
        self.canvas = canvas
        self.aa_width = aa_width
        self.tol = tol
        self.threads = threads
        self._ctx: list[tuple[range, RenderContext]] | None = None

    def forward(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        k = points.shape[0]
        h, w = self.canvas
        if points.shape[1] == 0:
            self._ctx = []
            return np.ones((k, h, w))
        chunks = _chunks(k, self.threads)

        def run(rng: range):
            return _render_batch(
                points[rng.start : rng.stop], self.widths, self.canvas,
                self.aa_width, self.tol,
            )

        if len(chunks) > 1:
            with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
                results = list(pool.map(run, chunks))
        else:
            results = [run(c) for c in chunks]
        video = np.concatenate([v for v, _ in results], axis=0)
        self._ctx = [(c, ctx) for c, (_, ctx) in zip(chunks, results)]
        return video

    def backward(self, upstream: np.ndarray) -> np.ndarray:
        if self._ctx is None:
            raise RuntimeError("backward called before forward")
        if not self._ctx:
            return np.zeros((upstream.shape[0], 0, 2))
        chunks = [c for c, _ in self._ctx]

        def run(item):
            rng, ctx = item
            return _backward_batch(ctx, upstream[rng.start : rng.stop])

        if len(chunks) > 1:
            with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
                results = list(pool.map(run, self._ctx))
        else:
            results = [run(item) for item in self._ctx]
        return np.concatenate(results, axis=0)


def render_frame(
    points: np.ndarray,
    widths: np.ndarray,
    canvas: tuple[int, int],
    aa_width: float = DEFAULT_AA_WIDTH,
    tol: float = DEFAULT_FLATTEN_TOL,
) -> np.ndarray:
    """Render one frame's point set; returns an (h, w) grayscale grid."""
    r = VideoRenderer(widths, canvas, aa_width, tol)
    return r.forward(np.asarray(points, dtype=np.float64)[None])[0]


def render_backward(
    points: np.ndarray,
    widths: np.ndarray,
    canvas: tuple[int, int],
    aa_width: float,
    upstream: np.ndarray,
    tol: float = DEFAULT_FLATTEN_TOL,
) -> np.ndarray:
    """Gradient of sum(upstream * frame) w.r.t. one frame's (N, 2) points."""
    r = VideoRenderer(widths, canvas, aa_width, tol)
    r.forward(np.asarray(points, dtype=np.float64)[None])
    return r.backward(np.asarray(upstream, dtype=np.float64)[None])[0]


def render_sketch(
    sketch: Sketch,
    aa_width: float = DEFAULT_AA_WIDTH,
    tol: float = DEFAULT_FLATTEN_TOL,
) -> np.ndarray:
    return render_frame(sketch.points(), sketch.widths, sketch.canvas, aa_width, tol)


def render_video(
    seq: MotionSequence,
    aa_width: float = DEFAULT_AA_WIDTH,
    tol: float = DEFAULT_FLATTEN_TOL,
    threads: int = 1,
) -> np.ndarray:
    """Render all frames of a motion sequence; returns (k, h, w)."""
    r = VideoRenderer(seq.base.widths, seq.base.canvas, aa_width, tol, threads)
    return r.forward(seq.all_points())
