"""Frame and animation export, plus reference-video loading.

Frames are written as 8-bit grayscale PNGs named frame_%03d.png; the
animated GIF is paletted with a per-frame delay of 1000/fps ms. Reference
videos for the analytic critic load from a .npy file, a directory of
grayscale PNGs, or a raw little-endian float32 file with a JSON sidecar
({"shape": [k, h, w]}) next to it.
"""

from __future__ import annotations

import json
import os

import numpy as np
from PIL import Image

from .raster import validate_frame

DEFAULT_GIF_FPS = 8.0
FRAME_PATTERN = "frame_%03d"


def to_uint8(frame: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(frame * 255.0), 0, 255).astype(np.uint8)


def write_png(frame: np.ndarray, path: str) -> None:
    validate_frame(frame)
    Image.fromarray(to_uint8(frame), mode="L").save(path, format="PNG")


def write_frames(video: np.ndarray, out_dir: str) -> list[str]:
    paths = []
    for j, frame in enumerate(video):
        path = os.path.join(out_dir, (FRAME_PATTERN % j) + ".png")
        write_png(frame, path)
        paths.append(path)
    return paths


def write_gif(video: np.ndarray, path: str, fps: float = DEFAULT_GIF_FPS) -> None:
    frames = [
        Image.fromarray(to_uint8(f), mode="L").convert("P", palette=Image.ADAPTIVE)
        for f in video
    ]
    frames[0].save(
        path,
        save_all=True,
        append_images=frames[1:],
        duration=int(round(1000.0 / fps)),
        loop=0,
    )


def load_reference_video(path: str) -> np.ndarray:
    """Load a (k, h, w) float reference video in [0, 1]."""
    if os.path.isdir(path):
        names = sorted(n for n in os.listdir(path) if n.lower().endswith(".png"))
        if not names:
            raise FileNotFoundError(f"no PNG frames in {path}")
        frames = [
            np.asarray(Image.open(os.path.join(path, n)).convert("L"), dtype=np.float64)
            / 255.0
            for n in names
        ]
        return np.stack(frames)
    if path.endswith(".npy"):
        video = np.load(path).astype(np.float64)
    else:
        sidecar = path + ".json"
        if not os.path.exists(sidecar):
            raise FileNotFoundError(
                f"raw tensor {path} needs a JSON sidecar {sidecar} with its shape"
            )
        with open(sidecar) as f:
            shape = tuple(json.load(f)["shape"])
        video = np.fromfile(path, dtype="<f4").reshape(shape).astype(np.float64)
    if video.ndim != 3:
        raise ValueError(f"reference video must be (k, h, w), got {video.shape}")
    return video
