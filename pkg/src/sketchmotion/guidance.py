"""Diffusion noise schedule, score-distillation pixel gradient, and the
pluggable video-critic interface.

A critic predicts the noise added to a video at timestep t, conditioned on
a text prompt. Three implementations ship here: an analytic critic whose
prediction pulls the render toward a reference video (enables full
desk-scale testing), a zero critic for plumbing smoke tests, and an HTTP
client speaking the wire protocol below to a remote diffusion model.

Renders in [0, 1] are remapped to [-1, 1] before noising (the usual
diffusion convention); the analytic critic uses the same mapping.

Wire protocol v1: POST /v1/predict_noise with JSON
    {version:"1", t:int, prompt:str, guidance_scale:float,
     shape:[k,h,w], data_b64:str}
where data_b64 is base64 of little-endian float32 in row-major (k, h, w)
order; the response is {version:"1", shape:[k,h,w], data_b64:str}.
GET /v1/health returns {status:"ok", model:str}.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field

import numpy as np
import requests

PROTOCOL_VERSION = "1"
MAX_PAYLOAD_BYTES = 64 * 1024 * 1024
DEFAULT_TIMEOUT = 120.0
TIMESTEP_MIN = 50
TIMESTEP_MAX = 950


class CriticError(Exception):
    """Base class for critic failures."""


class CriticConnectionError(CriticError):
    pass


class CriticTimeoutError(CriticError):
    pass


class CriticShapeError(CriticError):
    pass


class CriticProtocolError(CriticError):
    pass


# ---------------------------------------------------------------------------
# Noise schedule


class NoiseSchedule:
    """Variance-preserving schedule with a linear beta ramp.

    alpha_bar_t is the running product of (1 - beta_s); the signal and
    noise scales a_t = sqrt(alpha_bar_t) and sigma_t = sqrt(1 - alpha_bar_t)
    satisfy a_t^2 + sigma_t^2 = 1 for every t in [1, T].
    """

    def __init__(
        self,
        steps: int = 1000,
        beta_start: float = 1e-4,
        beta_end: float = 0.02,
        weighting: str = "sigma_sq",
    ):
        if weighting not in ("sigma_sq", "one"):
            raise ValueError(f"unknown weighting {weighting!r}")
        self.steps = steps
        self.weighting = weighting
        self.betas = np.linspace(beta_start, beta_end, steps)
        self.alpha_bar = np.cumprod(1.0 - self.betas)
        self.signal_scale = np.sqrt(self.alpha_bar)
        self.noise_scale = np.sqrt(1.0 - self.alpha_bar)

    def _check_t(self, t: int) -> int:
        if not 1 <= t <= self.steps:
            raise ValueError(f"timestep {t} out of range [1, {self.steps}]")
        return int(t)

    def a(self, t: int) -> float:
        return float(self.signal_scale[self._check_t(t) - 1])

    def sigma(self, t: int) -> float:
        return float(self.noise_scale[self._check_t(t) - 1])

    def weight(self, t: int) -> float:
        """SDS weighting w(t); default sigma_t^2, optionally constant 1."""
        if self.weighting == "one":
            self._check_t(t)
            return 1.0
        return float(1.0 - self.alpha_bar[self._check_t(t) - 1])

    def add_noise(self, x: np.ndarray, t: int, eps: np.ndarray) -> np.ndarray:
        """Forward diffusion x_t = a_t x + sigma_t eps (x already remapped)."""
        if eps.shape != x.shape:
            raise ValueError(f"noise shape {eps.shape} != video shape {x.shape}")
        return self.a(t) * x + self.sigma(t) * eps


def sample_timestep(
    rng: np.random.Generator, t_min: int = TIMESTEP_MIN, t_max: int = TIMESTEP_MAX
) -> int:
    """Uniform integer timestep in [t_min, t_max], both inclusive."""
    return int(rng.integers(t_min, t_max + 1))


def remap_video(video: np.ndarray, invert: bool = False) -> np.ndarray:
    """[0, 1] render -> [-1, 1] critic range; invert flips ink polarity."""
    x = 2.0 * video - 1.0
    return -x if invert else x


def sds_pixel_grad(
    eps_hat: np.ndarray, eps: np.ndarray, t: int, schedule: NoiseSchedule
) -> np.ndarray:
    """Score-distillation gradient w(t) * (eps_hat - eps) w.r.t. the
    critic-range video; the caller chains it through remap, augmentation
    and the rasterizer. No gradient flows into the critic."""
    if eps_hat.shape != eps.shape:
        raise ValueError(f"shape mismatch {eps_hat.shape} vs {eps.shape}")
    return schedule.weight(t) * (eps_hat - eps)


# ---------------------------------------------------------------------------
# Critic interface


@dataclass
class CriticRequest:
    """One noise-prediction query.

    `noise` (the true sample added by the trainer) and `clean` (the
    un-noised video in critic range) are never sent over the wire;
    analytic desk-scale critics use them for exact classifier-free
    guidance: gs = 0 must return exactly eps, and a render equal to the
    reference must produce exactly zero gradient, neither of which
    survives reconstructing the clean video from x_t in floating point.
    """

    video: np.ndarray  # (k, h, w), noised, critic value range
    t: int
    prompt: str
    guidance_scale: float = 1.0
    noise: np.ndarray | None = field(default=None, repr=False)
    clean: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.video.ndim != 3:
            raise ValueError(f"video must be (k, h, w), got {self.video.shape}")
        if not np.all(np.isfinite(self.video)):
            raise ValueError("video must be finite")


@dataclass
class CriticResponse:
    eps_hat: np.ndarray  # (k, h, w)


class TargetVideoCritic:
    """Closed-form critic pulling the render toward a reference video.

    Its raw prediction (x_t - a_t x*) / sigma_t equals eps + (a_t/sigma_t)
    (x - x*), so the resulting SDS gradient is a positive multiple of
    (render - reference). Guidance scales the deviation from the true
    noise: eps + gs * (prediction - eps).
    """

    def __init__(self, reference: np.ndarray, schedule: NoiseSchedule, invert: bool = False):
        self.reference = np.asarray(reference, dtype=np.float64)
        self.schedule = schedule
        self.target = remap_video(self.reference, invert)

    def predict(self, request: CriticRequest) -> CriticResponse:
        if request.video.shape != self.target.shape:
            raise CriticShapeError(
                f"request video {request.video.shape} != reference {self.target.shape}"
            )
        sigma = self.schedule.sigma(request.t)
        if sigma == 0.0:
            raise ZeroDivisionError("sigma_t is zero; cannot invert the noising")
        a = self.schedule.a(request.t)
        if request.noise is None:
            raise ValueError("analytic critic needs the true noise for guidance")
        if request.clean is not None:
            # (x_t - a x*)/sigma == eps + (a/sigma)(x - x*); using the clean
            # video directly keeps eps_hat exactly eps when x == x*
            gap = (a / sigma) * (request.clean - self.target)
        else:
            gap = (request.video - a * self.target) / sigma - request.noise
        return CriticResponse(request.noise + request.guidance_scale * gap)


class ZeroCritic:
    """Predicts all-zero noise; exercises the loop without any model."""

    def predict(self, request: CriticRequest) -> CriticResponse:
        return CriticResponse(np.zeros_like(request.video))


# ---------------------------------------------------------------------------
# Wire encoding


def encode_tensor(arr: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(arr, dtype="<f4").tobytes()).decode()


def decode_tensor(data_b64: str, shape: tuple[int, ...]) -> np.ndarray:
    raw = base64.b64decode(data_b64.encode(), validate=True)
    expected = int(np.prod(shape)) * 4
    if len(raw) != expected:
        raise CriticShapeError(
            f"payload is {len(raw)} bytes, shape {shape} needs {expected}"
        )
    return np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float64)


def encode_request(request: CriticRequest) -> bytes:
    body = json.dumps(
        {
            "version": PROTOCOL_VERSION,
            "t": int(request.t),
            "prompt": request.prompt,
            "guidance_scale": float(request.guidance_scale),
            "shape": list(request.video.shape),
            "data_b64": encode_tensor(request.video),
        }
    ).encode()
    if len(body) > MAX_PAYLOAD_BYTES:
        raise CriticProtocolError(
            f"request body {len(body)} bytes exceeds {MAX_PAYLOAD_BYTES}"
        )
    return body


class RemoteCritic:
    """HTTP client for a critic service speaking protocol v1."""

    def __init__(self, endpoint: str, timeout: float = DEFAULT_TIMEOUT):
        self.endpoint = endpoint.rstrip("/")
        self.timeout = timeout

    def health(self) -> dict:
        try:
            r = requests.get(f"{self.endpoint}/v1/health", timeout=self.timeout)
        except requests.Timeout as e:
            raise CriticTimeoutError(str(e)) from e
        except requests.ConnectionError as e:
            raise CriticConnectionError(str(e)) from e
        if r.status_code != 200:
            raise CriticProtocolError(f"health returned HTTP {r.status_code}")
        return r.json()

    def predict(self, request: CriticRequest) -> CriticResponse:
        body = encode_request(request)
        try:
            r = requests.post(
                f"{self.endpoint}/v1/predict_noise",
                data=body,
                headers={"Content-Type": "application/json"},
                timeout=self.timeout,
            )
        except requests.Timeout as e:
            raise CriticTimeoutError(f"critic timed out after {self.timeout}s") from e
        except requests.ConnectionError as e:
            raise CriticConnectionError(f"cannot reach critic: {e}") from e
        if r.status_code != 200:
            raise CriticProtocolError(
                f"critic returned HTTP {r.status_code}: {r.text[:200]}"
            )
        try:
            payload = r.json()
        except ValueError as e:
            raise CriticProtocolError(f"response is not JSON: {e}") from e
        if payload.get("version") != PROTOCOL_VERSION:
            raise CriticProtocolError(
                f"protocol version mismatch: got {payload.get('version')!r}, "
                f"expected {PROTOCOL_VERSION!r}"
            )
        shape = tuple(payload.get("shape", ()))
        if shape != request.video.shape:
            raise CriticShapeError(
                f"response shape {shape} != request shape {request.video.shape}"
            )
        eps_hat = decode_tensor(payload["data_b64"], shape)
        return CriticResponse(eps_hat)
