"""Alternating local/global optimization of the displacement field.

Each step renders the current k-frame animation, optionally augments it,
remaps to the critic range, noises it at a random timestep, asks the
critic for a noise prediction, and chains the score-distillation pixel
gradient back through augmentation, rasterizer and field. Even-indexed
phases update the local branch, odd the global branch; the shared
backbone updates in both, each branch owning its own Adam state (the
backbone sees two learning rates, one per phase).

All randomness (timesteps, noise, augmentation draws) comes from one
generator consumed in step order, so a fixed seed reproduces a run
bit-for-bit with the analytic critic.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field as dc_field

import numpy as np

from .augment import apply_augment, augment_backward, build_map, sample_augment
from .field import DisplacementField, FieldConfig, save_checkpoint
from .geometry import MotionLambdas
from .guidance import (
    CriticError,
    CriticRequest,
    NoiseSchedule,
    remap_video,
    sample_timestep,
    sds_pixel_grad,
)
from .raster import VideoRenderer
from .sketch import MotionSequence, Sketch


class NanAbortError(RuntimeError):
    """A NaN appeared in gradients or displacements; training aborted."""


class TrainerCriticError(RuntimeError):
    """Critic failure wrapped with the step at which it occurred."""

    def __init__(self, step: int, cause: Exception):
        super().__init__(f"critic failed at step {step}: {cause}")
        self.step = step
        self.cause = cause


@dataclass
class TrainConfig:
    steps: int = 1000
    frames: int = 24
    canvas: int = 256
    lr_local: float = 1e-4
    lr_global: float = 5e-3
    gs_local: float = 30.0
    gs_global: float = 40.0
    lambdas: MotionLambdas = dc_field(default_factory=MotionLambdas)
    t_min: int = 50
    t_max: int = 950
    augment: bool = True
    invert: bool = False
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    threads: int = 1
    checkpoint_every: int = 100
    weighting: str = "sigma_sq"
    alternate_every: int = 1
    samples_per_step: int = 1
    early_stop: int | None = None
    embed_dim: int = 128
    local_hidden: tuple[int, ...] = (256, 256)
    global_hidden: tuple[int, ...] = (128,)
    pe_frequencies: int = 4

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        for name in ("lr_local", "lr_global", "gs_local", "gs_global"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not 1 <= self.t_min <= self.t_max:
            raise ValueError(f"bad timestep range [{self.t_min}, {self.t_max}]")
        if self.alternate_every < 1 or self.samples_per_step < 1:
            raise ValueError("alternate_every and samples_per_step must be >= 1")

    def effective_steps(self) -> int:
        if self.early_stop is None:
            return self.steps
        return min(self.steps, self.early_stop)


@dataclass
class StepRecord:
    step: int
    branch: str
    t: int
    grad_norm: float
    mean_abs_dz: float
    mean_abs_dz_local: float
    global_tx: list[float]
    global_ty: list[float]
    wall_time: float
    target_mse: float | None = None

    def to_json_dict(self) -> dict:
        # wall time is kept in memory but not serialized: log files must be
        # bit-identical across runs with the same seed and config
        d = {
            "step": self.step,
            "branch": self.branch,
            "t": self.t,
            "grad_norm": self.grad_norm,
            "mean_abs_dz": self.mean_abs_dz,
            "mean_abs_dz_local": self.mean_abs_dz_local,
            "global_tx": self.global_tx,
            "global_ty": self.global_ty,
        }
        if self.target_mse is not None:
            d["target_mse"] = self.target_mse
        return d


@dataclass
class TrainLog:
    records: list[StepRecord] = dc_field(default_factory=list)

    def write_jsonl(self, path: str) -> None:
        with open(path, "w") as f:
            for rec in self.records:
                f.write(json.dumps(rec.to_json_dict()) + "\n")


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def for_params(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
        )


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """Standard bias-corrected Adam update, in place."""
    state.step += 1
    b1t = 1.0 - beta1**state.step
    b2t = 1.0 - beta2**state.step
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NanAbortError(f"non-finite gradient in {name!r}")
        m = state.m[name]
        v = state.v[name]
        m += (1.0 - beta1) * (g - m)
        v += (1.0 - beta2) * (g * g - v)
        params[name] -= lr * (m / b1t) / (np.sqrt(v / b2t) + eps)


# ---------------------------------------------------------------------------
# Training loop


def train(
    sketch: Sketch,
    prompt: str,
    critic,
    config: TrainConfig,
    out_dir: str | None = None,
) -> tuple[MotionSequence, DisplacementField, TrainLog]:
    """Optimize a displacement field for the sketch against the critic.

    Returns the final motion sequence, the trained field and the step log.
    Raises TrainerCriticError on critic failure and NanAbortError if any
    gradient or displacement goes non-finite.
    """
    if sketch.point_count == 0:
        raise ValueError("cannot animate an empty sketch")
    h = w = config.canvas
    if sketch.canvas != (h, w):
        raise ValueError(
            f"sketch canvas {sketch.canvas} != configured canvas {(h, w)}"
        )
    field_cfg = FieldConfig(
        frames=config.frames,
        points=sketch.point_count,
        embed_dim=config.embed_dim,
        local_hidden=config.local_hidden,
        global_hidden=config.global_hidden,
        pe_frequencies=config.pe_frequencies,
    )
    seq_field, seq_loop = np.random.SeedSequence(config.seed).spawn(2)
    field = DisplacementField(
        field_cfg, config.lambdas, seed=int(seq_field.generate_state(1)[0])
    )
    rng = np.random.default_rng(seq_loop)
    schedule = NoiseSchedule(weighting=config.weighting)
    renderer = VideoRenderer(
        sketch.widths, sketch.canvas, threads=config.threads
    )
    base_points = sketch.points()
    reference = getattr(critic, "reference", None)

    states = {
        "local": AdamState.for_params(_bucket_params(field, "local", "shared")),
        "global": AdamState.for_params(_bucket_params(field, "global", "shared")),
    }
    log = TrainLog()

    for step in range(config.effective_steps()):
        t_start = time.perf_counter()
        branch = "local" if (step // config.alternate_every) % 2 == 0 else "global"
        gs = config.gs_local if branch == "local" else config.gs_global
        lr = config.lr_local if branch == "local" else config.lr_global

        out = field.forward(sketch)
        if not np.all(np.isfinite(out.dz)):
            raise NanAbortError(f"non-finite displacement at step {step}")
        video = renderer.forward(base_points[None] + out.dz)

        if config.augment:
            amap = build_map(sample_augment(rng, (h, w)), (h, w))
            critic_view = apply_augment(video, amap)
        else:
            amap = None
            critic_view = video
        x = remap_video(critic_view, config.invert)

        g_x = np.zeros_like(x)
        t_logged = 0
        for _ in range(config.samples_per_step):
            t = sample_timestep(rng, config.t_min, config.t_max)
            t_logged = t
            eps = rng.standard_normal(x.shape)
            x_t = schedule.add_noise(x, t, eps)
            request = CriticRequest(
                video=x_t, t=t, prompt=prompt, guidance_scale=gs, noise=eps, clean=x
            )
            try:
                response = critic.predict(request)
            except CriticError as e:
                raise TrainerCriticError(step, e) from e
            g_x += sds_pixel_grad(response.eps_hat, eps, t, schedule)
        g_x /= config.samples_per_step

        g_view = -2.0 * g_x if config.invert else 2.0 * g_x
        g_video = augment_backward(g_view, amap) if amap is not None else g_view
        d_points = renderer.backward(g_video)
        grads = field.backward(d_points)

        active = _bucket_params(field, branch, "shared")
        active_grads = {**grads[branch], **grads["shared"]}
        adam_step(
            active,
            active_grads,
            states[branch],
            lr,
            config.adam_beta1,
            config.adam_beta2,
            config.adam_eps,
        )

        record = StepRecord(
            step=step,
            branch=branch,
            t=t_logged,
            grad_norm=float(np.linalg.norm(g_x)),
            mean_abs_dz=float(np.mean(np.abs(out.dz))),
            mean_abs_dz_local=float(np.mean(np.abs(out.dz_local))),
            global_tx=[float(v) for v in out.matrices[:, 0, 2]],
            global_ty=[float(v) for v in out.matrices[:, 1, 2]],
            wall_time=time.perf_counter() - t_start,
        )
        if reference is not None:
            record.target_mse = float(np.mean((video - reference) ** 2))
        log.records.append(record)

        if (
            out_dir
            and config.checkpoint_every > 0
            and (step + 1) % config.checkpoint_every == 0
        ):
            save_checkpoint(
                field, os.path.join(out_dir, f"field_{step + 1:06d}.skmf")
            )

    final = field.forward(sketch)
    return MotionSequence(sketch, final.dz), field, log


def _bucket_params(field: DisplacementField, *buckets: str) -> dict[str, np.ndarray]:
    out = {}
    for bucket in buckets:
        for name in field.bucket_names(bucket):
            out[name] = field.params[name]
    return out
