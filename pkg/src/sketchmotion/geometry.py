"""Bezier evaluation/flattening and the global affine transform algebra.

The flattener works on batches of curves at once (all strokes of all
frames of a video) so the rasterizer never loops over strokes in Python.
Subdivision is adaptive on parameter intervals; the resulting breakpoint
parameters are what the rasterizer's backward pass freezes, since every
polyline vertex is a fixed Bernstein combination of the 4 control points.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sketch import ControlPoint, Sketch, Stroke

# Hard floor on interval width; guarantees flattening terminates even for
# pathological cusps (2^-20 of a curve is far below any sane tolerance).
_MIN_INTERVAL = 2.0**-20

DEFAULT_FLATTEN_TOL = 0.1


# ---------------------------------------------------------------------------
# Bezier evaluation


def bernstein_weights(u: np.ndarray) -> np.ndarray:
    """Cubic Bernstein basis at u, shape (..., 4)."""
    u = np.asarray(u, dtype=np.float64)
    v = 1.0 - u
    return np.stack([v * v * v, 3.0 * u * v * v, 3.0 * u * u * v, u * u * u], axis=-1)


def cubic_point(ctrl: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Evaluate cubic curves: ctrl (..., 4, 2) at u (...) -> (..., 2)."""
    w = bernstein_weights(u)
    return np.einsum("...c,...cd->...d", w, ctrl)


def cubic_derivative(ctrl: np.ndarray, u: np.ndarray) -> np.ndarray:
    """First derivative of cubic curves w.r.t. u, shape (..., 2)."""
    u = np.asarray(u, dtype=np.float64)[..., None]
    d0 = ctrl[..., 1, :] - ctrl[..., 0, :]
    d1 = ctrl[..., 2, :] - ctrl[..., 1, :]
    d2 = ctrl[..., 3, :] - ctrl[..., 2, :]
    v = 1.0 - u
    return 3.0 * (v * v * d0 + 2.0 * u * v * d1 + u * u * d2)


def bezier_point(stroke: Stroke, u: float) -> ControlPoint:
    """Point on a stroke at parameter u in [0, 1]."""
    if not 0.0 <= u <= 1.0:
        raise ValueError(f"parameter u must be in [0, 1], got {u}")
    x, y = cubic_point(stroke.points, np.float64(u))
    return ControlPoint(float(x), float(y))


# ---------------------------------------------------------------------------
# Adaptive flattening


def _restrict(ctrl: np.ndarray, u0: np.ndarray, u1: np.ndarray) -> np.ndarray:
    """Control points of the sub-curves on [u0, u1], shape (M, 4, 2).

    Exact for cubics: endpoints and scaled end tangents determine the
    restricted control polygon (Hermite form of the same polynomial).
    """
    h = (u1 - u0)[:, None] / 3.0
    q0 = cubic_point(ctrl, u0)
    q3 = cubic_point(ctrl, u1)
    q1 = q0 + h * cubic_derivative(ctrl, u0)
    q2 = q3 - h * cubic_derivative(ctrl, u1)
    return np.stack([q0, q1, q2, q3], axis=1)


def _dist_to_chord(q: np.ndarray) -> np.ndarray:
    """Max distance of the two inner control points to the chord segment."""
    a, b = q[:, 0], q[:, 3]
    ab = b - a
    denom = np.einsum("md,md->m", ab, ab)
    safe = np.where(denom > 0.0, denom, 1.0)
    dmax = np.zeros(len(q))
    for i in (1, 2):
        ap = q[:, i] - a
        t = np.clip(np.einsum("md,md->m", ap, ab) / safe, 0.0, 1.0)
        t = np.where(denom > 0.0, t, 0.0)
        diff = ap - t[:, None] * ab
        dmax = np.maximum(dmax, np.sqrt(np.einsum("md,md->m", diff, diff)))
    return dmax


def flatten_curves(ctrl: np.ndarray, tol: float) -> tuple[np.ndarray, np.ndarray]:
    """Adaptively flatten a batch of cubics to polylines within tol.

    ctrl: (B, 4, 2). Returns (us, offsets): us is the concatenation of each
    curve's sorted breakpoint parameters (each starting 0.0, ending 1.0),
    offsets (B+1,) delimits curves, so curve b's vertices are
    cubic_point(ctrl[b], us[offsets[b]:offsets[b+1]]).

    A sub-curve is emitted once 3/4 of the max inner-control-point distance
    to its chord (a bound on the true curve/chord deviation) is <= tol.
    """
    if tol <= 0:
        raise ValueError(f"flatten tolerance must be positive, got {tol}")
    ctrl = np.asarray(ctrl, dtype=np.float64)
    nb = len(ctrl)
    if nb == 0:
        return np.zeros(0), np.zeros(1, dtype=np.int64)

    curve = np.arange(nb, dtype=np.int64)
    u0 = np.zeros(nb)
    u1 = np.ones(nb)
    done_curve = [np.empty(0, dtype=np.int64)]
    done_u0 = [np.empty(0)]

    while len(curve):
        q = _restrict(ctrl[curve], u0, u1)
        err = 0.75 * _dist_to_chord(q)
        flat = (err <= tol) | ((u1 - u0) <= _MIN_INTERVAL)
        done_curve.append(curve[flat])
        done_u0.append(u0[flat])
        curve, u0, u1 = curve[~flat], u0[~flat], u1[~flat]
        if len(curve):
            um = 0.5 * (u0 + u1)
            curve = np.concatenate([curve, curve])
            u0, u1 = np.concatenate([u0, um]), np.concatenate([um, u1])

    seg_curve = np.concatenate(done_curve)
    seg_u0 = np.concatenate(done_u0)
    order = np.lexsort((seg_u0, seg_curve))
    seg_curve, seg_u0 = seg_curve[order], seg_u0[order]

    # One vertex per segment start plus a trailing 1.0 per curve.
    counts = np.bincount(seg_curve, minlength=nb) + 1
    offsets = np.zeros(nb + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    us = np.ones(offsets[-1])
    starts = np.arange(len(seg_u0)) + seg_curve  # skip each curve's trailing slot
    us[starts] = seg_u0
    return us, offsets


def flatten_stroke(stroke: Stroke, tol: float = DEFAULT_FLATTEN_TOL) -> np.ndarray:
    """Polyline approximation of one stroke, shape (M, 2), M >= 2."""
    us, _ = flatten_curves(stroke.points[None], tol)
    return cubic_point(stroke.points[None].repeat(len(us), axis=0), us)


# ---------------------------------------------------------------------------
# Affine transform algebra


@dataclass(frozen=True)
class AffineParams:
    """Raw per-frame transform residuals, all zero at the identity."""

    dx: float = 0.0
    dy: float = 0.0
    theta: float = 0.0
    sx: float = 0.0
    sy: float = 0.0
    shx: float = 0.0
    shy: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.dx, self.dy, self.theta, self.sx, self.sy, self.shx, self.shy]
        )


@dataclass(frozen=True)
class MotionLambdas:
    """Attenuation factors for translation, rotation, scale and shear."""

    translation: float = 1.0
    rotation: float = 1e-2
    scale: float = 5e-2
    shear: float = 1e-1

    def __post_init__(self):
        for name, v in self.__dict__.items():
            if not (np.isfinite(v) and v >= 0):
                raise ValueError(f"lambda {name} must be >= 0, got {v}")


def compose_affine(params: AffineParams, lambdas: MotionLambdas) -> np.ndarray:
    """3x3 transform applying scale, then shear, then rotation, then translation.

    Raw parameters are residuals around the identity, attenuated by the
    lambdas before use; all-zero params give the exact identity. Shear is
    the product of the two single-axis shears (x then y), which keeps the
    linear block's determinant exactly (1 + ls*sx)(1 + ls*sy).
    """
    T, _ = compose_affine_with_grad(params, lambdas)
    return T


def compose_affine_with_grad(
    params: AffineParams, lambdas: MotionLambdas
) -> tuple[np.ndarray, np.ndarray]:
    """compose_affine plus the (7, 3, 3) Jacobian w.r.t. the raw parameters.

    Parameter order matches AffineParams.as_array.
    """
    lt, lr, ls, lsh = (
        lambdas.translation,
        lambdas.rotation,
        lambdas.scale,
        lambdas.shear,
    )
    th = lr * params.theta
    c, s = np.cos(th), np.sin(th)
    ax, ay = lsh * params.shx, lsh * params.shy
    kx, ky = 1.0 + ls * params.sx, 1.0 + ls * params.sy

    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    shear = np.array([[1.0 + ax * ay, ax, 0.0], [ay, 1.0, 0.0], [0.0, 0.0, 1.0]])
    scale = np.diag([kx, ky, 1.0])

    T = rot @ shear @ scale
    T[0, 2] = lt * params.dx
    T[1, 2] = lt * params.dy

    grad = np.zeros((7, 3, 3))
    grad[0, 0, 2] = lt
    grad[1, 1, 2] = lt
    drot = lr * np.array([[-s, -c, 0.0], [c, -s, 0.0], [0.0, 0.0, 0.0]])
    grad[2] = drot @ shear @ scale
    grad[3] = rot @ shear @ np.diag([ls, 0.0, 0.0])
    grad[4] = rot @ shear @ np.diag([0.0, ls, 0.0])
    dshx = np.array([[lsh * ay, lsh, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
    grad[5] = rot @ dshx @ scale
    dshy = np.array([[ax * lsh, 0.0, 0.0], [lsh, 0.0, 0.0], [0.0, 0.0, 0.0]])
    grad[6] = rot @ dshy @ scale
    return T, grad


def apply_affine(T: np.ndarray, points: np.ndarray, pivot) -> np.ndarray:
    """Apply T about a pivot: pivot maps to pivot + T's translation column."""
    piv = np.asarray(pivot, dtype=np.float64)
    return (points - piv) @ T[:2, :2].T + piv + T[:2, 2]


def global_displacement(
    T: np.ndarray, sketch: Sketch, pivot=None
) -> np.ndarray:
    """Per-point offsets (N, 2) moving the sketch by T about the pivot.

    Defaults to the canvas center. Computed as (A - I)(p - c) + t rather
    than T(p) - p so an identity T gives exactly zero offsets.
    """
    if T.shape != (3, 3):
        raise ValueError(f"expected a 3x3 matrix, got {T.shape}")
    if pivot is None:
        pivot = sketch.center()
    centered = sketch.points() - np.asarray(pivot, dtype=np.float64)
    return centered @ (T[:2, :2] - np.eye(2)).T + T[:2, 2]
