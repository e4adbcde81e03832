"""Neural displacement field: shared point embedding feeding a local
offset branch and a global per-frame affine branch.

The field maps a static sketch to per-frame point displacements. Each
point is projected by a shared linear map and summed with a positional
encoding over (frame index, point order). A small MLP predicts a free
offset per point (local branch); a pooled per-frame head predicts seven
affine residuals which compose into one transform per frame (global
branch). Both output layers are zero-initialized so a fresh field is the
identity: zero offsets, identity matrices.

All gradients are computed in closed form by hand (reverse mode). The
backward pass buckets parameter gradients as shared / local / global so
the trainer can alternate branch updates while always updating the
shared backbone.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field as dc_field

import numpy as np

from .geometry import MotionLambdas, compose_affine_with_grad
from .sketch import Sketch

CHECKPOINT_MAGIC = b"SKMF1"


@dataclass(frozen=True)
class FieldConfig:
    frames: int
    points: int
    embed_dim: int = 128
    local_hidden: tuple[int, ...] = (256, 256)
    global_hidden: tuple[int, ...] = (128,)
    pe_frequencies: int = 4
    pe_learned: bool = False
    translation_scale: float = 8.0

    def __post_init__(self):
        if self.frames <= 0 or self.points <= 0:
            raise ValueError("frames and points must be positive")
        if self.embed_dim <= 0 or self.pe_frequencies <= 0:
            raise ValueError("embed_dim and pe_frequencies must be positive")
        object.__setattr__(self, "local_hidden", tuple(self.local_hidden))
        object.__setattr__(self, "global_hidden", tuple(self.global_hidden))

    def to_dict(self) -> dict:
        return {
            "frames": self.frames,
            "points": self.points,
            "embed_dim": self.embed_dim,
            "local_hidden": list(self.local_hidden),
            "global_hidden": list(self.global_hidden),
            "pe_frequencies": self.pe_frequencies,
            "pe_learned": self.pe_learned,
            "translation_scale": self.translation_scale,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FieldConfig":
        return cls(
            frames=d["frames"],
            points=d["points"],
            embed_dim=d["embed_dim"],
            local_hidden=tuple(d["local_hidden"]),
            global_hidden=tuple(d["global_hidden"]),
            pe_frequencies=d["pe_frequencies"],
            pe_learned=d["pe_learned"],
            translation_scale=d.get("translation_scale", 8.0),
        )


@dataclass
class FieldOutput:
    """Per-branch displacements, per-frame transforms, and their sum."""

    dz_local: np.ndarray  # (k, N, 2)
    dz_global: np.ndarray  # (k, N, 2)
    matrices: np.ndarray  # (k, 3, 3)
    dz: np.ndarray = dc_field(init=False)  # (k, N, 2)

    def __post_init__(self):
        self.dz = self.dz_local + self.dz_global


def positional_features(frames: int, points: int, frequencies: int) -> np.ndarray:
    """Raw sinusoidal features over (j/k, i/N), shape (k, N, 4*frequencies).

    Channel layout per index pair: [sin/cos of 2^l * pi * j/k] for each
    frequency, then the same over i/N. Distinct (j, i) pairs get distinct
    features since both normalized angles stay below pi.
    """
    freqs = np.pi * (2.0 ** np.arange(frequencies))
    tj = np.arange(frames) / frames
    ti = np.arange(points) / points
    aj = tj[:, None] * freqs  # (k, F)
    ai = ti[:, None] * freqs  # (N, F)
    fj = np.stack([np.sin(aj), np.cos(aj)], axis=-1).reshape(frames, -1)
    fi = np.stack([np.sin(ai), np.cos(ai)], axis=-1).reshape(points, -1)
    out = np.empty((frames, points, 4 * frequencies))
    out[:, :, : 2 * frequencies] = fj[:, None, :]
    out[:, :, 2 * frequencies :] = fi[None, :, :]
    return out


def _init_linear(rng: np.random.Generator, fan_in: int, fan_out: int, zero: bool):
    if zero:
        return np.zeros((fan_out, fan_in)), np.zeros(fan_out)
    bound = 1.0 / np.sqrt(fan_in)
    w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
    b = rng.uniform(-bound, bound, size=fan_out)
    return w, b


def _mlp_forward(params: dict, prefix: str, n_layers: int, x: np.ndarray):
    """Tanh-hidden, linear-output MLP. Returns (output, cache of layer inputs)."""
    cache = []
    h = x
    for i in range(n_layers):
        w, b = params[f"{prefix}.w{i}"], params[f"{prefix}.b{i}"]
        z = h @ w.T + b
        cache.append(h)
        h = np.tanh(z) if i < n_layers - 1 else z
    return h, cache


def _mlp_backward(params, prefix, n_layers, cache, upstream, grads: dict):
    """Backprop through _mlp_forward; returns gradient w.r.t. the input.

    Hidden activations are read back from the cache (layer i's tanh output
    is layer i+1's input), so tanh' = 1 - a^2 costs no extra matmul.
    """
    g = upstream
    for i in reversed(range(n_layers)):
        h_in = cache[i]
        w = params[f"{prefix}.w{i}"]
        if i < n_layers - 1:
            a = cache[i + 1]
            g = g * (1.0 - a * a)
        grads[f"{prefix}.w{i}"] = g.T @ h_in
        grads[f"{prefix}.b{i}"] = g.sum(axis=0)
        g = g @ w
    return g


class DisplacementField:
    """Learnable two-branch displacement field over a sketch's points."""

    def __init__(
        self,
        config: FieldConfig,
        lambdas: MotionLambdas = MotionLambdas(),
        seed: int = 0,
    ):
        self.config = config
        self.lambdas = lambdas
        self.seed = seed
        rng = np.random.default_rng(seed)
        d = config.embed_dim
        self.params: dict[str, np.ndarray] = {}

        w, _ = _init_linear(rng, 2, d, zero=False)
        self.params["shared.w"] = w

        raw = positional_features(config.frames, config.points, config.pe_frequencies)
        proj, _ = _init_linear(rng, raw.shape[-1], d, zero=False)
        self.pe_table = raw @ proj.T  # (k, N, d)
        if config.pe_learned:
            self.params["pe.table"] = self.pe_table

        sizes = [d, *config.local_hidden, 2]
        self.n_local = len(sizes) - 1
        for i in range(self.n_local):
            zero = i == self.n_local - 1
            wi, bi = _init_linear(rng, sizes[i], sizes[i + 1], zero)
            self.params[f"local.w{i}"], self.params[f"local.b{i}"] = wi, bi

        sizes = [d, *config.global_hidden, 7]
        self.n_global = len(sizes) - 1
        for i in range(self.n_global):
            zero = i == self.n_global - 1
            wi, bi = _init_linear(rng, sizes[i], sizes[i + 1], zero)
            self.params[f"global.w{i}"], self.params[f"global.b{i}"] = wi, bi

        self._cache = None

    # -- parameter bookkeeping ------------------------------------------

    def bucket_names(self, bucket: str) -> list[str]:
        if bucket == "shared":
            names = ["shared.w"] + (["pe.table"] if self.config.pe_learned else [])
        elif bucket in ("local", "global"):
            names = [k for k in self.params if k.startswith(bucket + ".")]
        else:
            raise KeyError(f"unknown bucket {bucket!r}")
        return names

    def parameter_count(self) -> int:
        return sum(p.size for p in self.params.values())

    # -- forward ---------------------------------------------------------

    def _normalize(self, sketch: Sketch) -> np.ndarray:
        h, w = sketch.canvas
        return 2.0 * sketch.points() / np.array([w, h]) - 1.0

    def embed(self, sketch: Sketch) -> np.ndarray:
        """Shared point features (k, N, d): projected coords + positional code."""
        if sketch.point_count != self.config.points:
            raise ValueError(
                f"field built for {self.config.points} points, "
                f"sketch has {sketch.point_count}"
            )
        pn = self._normalize(sketch)
        table = self.params["pe.table"] if self.config.pe_learned else self.pe_table
        return pn @ self.params["shared.w"].T + table

    def predict_local(self, features: np.ndarray) -> np.ndarray:
        """Per-point free offsets (k, N, 2) from the shared features."""
        k, n, d = features.shape
        out, _ = _mlp_forward(self.params, "local", self.n_local, features.reshape(-1, d))
        return out.reshape(k, n, 2)

    def predict_global(
        self, features: np.ndarray, sketch: Sketch, lambdas: MotionLambdas | None = None
    ) -> tuple[np.ndarray, np.ndarray]:
        """Per-frame transforms (k, 3, 3) and their point offsets (k, N, 2)."""
        lam = lambdas or self.lambdas
        pool = features.mean(axis=1)
        raw, _ = _mlp_forward(self.params, "global", self.n_global, pool)
        mats, dz_g, _ = self._apply_global(raw, sketch, lam)
        return mats, dz_g

    def _param_scale(self, sketch: Sketch) -> np.ndarray:
        # Translation outputs are converted from head units to pixels so the
        # default learning rates move frames at a useful speed; rotation,
        # scale and shear residuals are dimensionless and stay raw.
        ts = self.config.translation_scale
        return np.array([ts, ts, 1.0, 1.0, 1.0, 1.0, 1.0])

    def _apply_global(self, raw: np.ndarray, sketch: Sketch, lam: MotionLambdas):
        from .geometry import AffineParams

        centered = sketch.points() - np.asarray(sketch.center())
        scaled = raw * self._param_scale(sketch)
        mats = np.empty((len(raw), 3, 3))
        jacs = np.empty((len(raw), 7, 3, 3))
        for j, row in enumerate(scaled):
            mats[j], jacs[j] = compose_affine_with_grad(AffineParams(*row), lam)
        # (A - I)(p - c) + t: exactly zero at the identity, no cancellation
        dz_g = np.einsum(
            "jmn,in->jim", mats[:, :2, :2] - np.eye(2), centered
        ) + mats[:, None, :2, 2]
        return mats, dz_g, jacs

    def forward(
        self, sketch: Sketch, lambdas: MotionLambdas | None = None
    ) -> FieldOutput:
        """Predict displacements for all frames; caches for backward."""
        lam = lambdas or self.lambdas
        k, d = self.config.frames, self.config.embed_dim
        n = self.config.points
        pn = self._normalize(sketch)
        feats = self.embed(sketch)
        flat = feats.reshape(-1, d)

        local_out, local_cache = _mlp_forward(self.params, "local", self.n_local, flat)
        dz_l = local_out.reshape(k, n, 2)

        pool = feats.mean(axis=1)
        raw, global_cache = _mlp_forward(self.params, "global", self.n_global, pool)
        mats, dz_g, jacs = self._apply_global(raw, sketch, lam)

        self._cache = {
            "pn": pn,
            "local_cache": local_cache,
            "global_cache": global_cache,
            "jacs": jacs,
            "param_scale": self._param_scale(sketch),
            "centered": sketch.points() - np.asarray(sketch.center()),
        }
        return FieldOutput(dz_local=dz_l, dz_global=dz_g, matrices=mats)

    # -- backward --------------------------------------------------------

    def backward(self, upstream: np.ndarray) -> dict[str, dict[str, np.ndarray]]:
        """Exact parameter gradients for sum(upstream * dz), bucketed.

        upstream: (k, N, 2) = dL/d(dz). Shared-backbone gradients accumulate
        contributions from both branches. Requires a preceding forward().
        """
        if self._cache is None:
            raise RuntimeError("backward called before forward")
        k, n = self.config.frames, self.config.points
        d = self.config.embed_dim
        if upstream.shape != (k, n, 2):
            raise ValueError(f"upstream must be {(k, n, 2)}, got {upstream.shape}")
        cache = self._cache

        grads: dict[str, np.ndarray] = {}
        dfeat_local = _mlp_backward(
            self.params, "local", self.n_local, cache["local_cache"],
            upstream.reshape(-1, 2), grads,
        ).reshape(k, n, d)

        # global branch: dz_g[j,i] = A_j (p_i - c) + c + t_j - p_i
        centered = cache["centered"]
        dT = np.zeros((k, 3, 3))
        dT[:, :2, :2] = np.einsum("jim,in->jmn", upstream, centered)
        dT[:, :2, 2] = upstream.sum(axis=1)
        draw = np.einsum("jpmn,jmn->jp", cache["jacs"], dT) * cache["param_scale"]
        dpool = _mlp_backward(
            self.params, "global", self.n_global, cache["global_cache"], draw, grads
        )
        dfeat = dfeat_local + dpool[:, None, :] / n

        grads["shared.w"] = np.einsum("jid,in->dn", dfeat, cache["pn"])
        if self.config.pe_learned:
            grads["pe.table"] = dfeat

        return {
            bucket: {name: grads[name] for name in self.bucket_names(bucket)}
            for bucket in ("shared", "local", "global")
        }


# ---------------------------------------------------------------------------
# Checkpoint format: magic, little-endian uint32 header length, JSON header
# describing config and tensor layout, then raw little-endian float32 data.


def save_checkpoint(field: DisplacementField, path: str) -> None:
    names = sorted(field.params)
    tensors = []
    offset = 0
    for name in names:
        arr = field.params[name]
        tensors.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size * 4
    tensors.append(
        {"name": "pe.buffer", "shape": list(field.pe_table.shape), "offset": offset}
    )
    header = {
        "format": CHECKPOINT_MAGIC.decode(),
        "version": 1,
        "config": field.config.to_dict(),
        "lambdas": {
            "translation": field.lambdas.translation,
            "rotation": field.lambdas.rotation,
            "scale": field.lambdas.scale,
            "shear": field.lambdas.shear,
        },
        "seed": field.seed,
        "dtype": "<f4",
        "tensors": tensors,
    }
    blob = json.dumps(header).encode()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for name in names:
            f.write(field.params[name].astype("<f4").tobytes())
        f.write(field.pe_table.astype("<f4").tobytes())


def load_checkpoint(path: str) -> DisplacementField:
    with open(path, "rb") as f:
        magic = f.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"not a {CHECKPOINT_MAGIC.decode()} checkpoint: {path}")
        (hlen,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(hlen).decode())
        data = f.read()
    config = FieldConfig.from_dict(header["config"])
    lam = MotionLambdas(**header["lambdas"])
    field = DisplacementField(config, lam, seed=header.get("seed", 0))
    for spec in header["tensors"]:
        shape = tuple(spec["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = spec["offset"]
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=start)
        arr = arr.reshape(shape).astype(np.float64)
        if spec["name"] == "pe.buffer":
            field.pe_table = arr
        else:
            field.params[spec["name"]] = arr
    if config.pe_learned:
        field.pe_table = field.params["pe.table"]
    return field
