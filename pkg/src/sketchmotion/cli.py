"""Command-line entry point.

Every flag has a config-file equivalent (flat key=value, keys are the flag
names without the leading dashes); command-line values override the file.
The fully resolved configuration is recorded in the output manifest before
training starts, and a manifest can be replayed with --from-manifest to
reproduce a run bit-for-bit (with the analytic critic).

Exit codes: 0 success, 1 parse/configuration error, 2 critic unreachable,
3 NaN abort.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from datetime import datetime, timezone

import numpy as np

from . import __version__
from .export import load_reference_video, write_frames, write_gif
from .field import save_checkpoint
from .geometry import MotionLambdas
from .guidance import (
    CriticError,
    NoiseSchedule,
    RemoteCritic,
    TargetVideoCritic,
    ZeroCritic,
)
from .raster import render_video
from .sketch import Sketch, Stroke
from .svg import SvgParseError, parse_svg, write_svg
from .trainer import NanAbortError, TrainConfig, TrainerCriticError, train

EXIT_OK = 0
EXIT_PARSE = 1
EXIT_CRITIC = 2
EXIT_NAN = 3

CRITIC_URL_ENV = "SKETCHMOTION_CRITIC_URL"

# flag name -> (TrainConfig attribute, parser)
_ONOFF = {"on": True, "off": False}
_CONFIG_FLAGS: dict[str, tuple[str, type]] = {
    "steps": ("steps", int),
    "frames": ("frames", int),
    "size": ("canvas", int),
    "lr-local": ("lr_local", float),
    "lr-global": ("lr_global", float),
    "gs-local": ("gs_local", float),
    "gs-global": ("gs_global", float),
    "timestep-min": ("t_min", int),
    "timestep-max": ("t_max", int),
    "seed": ("seed", int),
    "threads": ("threads", int),
    "checkpoint-every": ("checkpoint_every", int),
}
_LAMBDA_FLAGS = {
    "lambda-t": "translation",
    "lambda-r": "rotation",
    "lambda-s": "scale",
    "lambda-sh": "shear",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2
        self.print_usage(sys.stderr)
        raise SystemExit(self._print_and_code(message))

    def _print_and_code(self, message):
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        return EXIT_PARSE


def _add_common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--sketch", help="input SVG file")
    p.add_argument("--prompt", help="text describing the desired motion")
    p.add_argument("--out", help="output directory")
    p.add_argument("--config", help="flat key=value config file")
    for flag in _CONFIG_FLAGS:
        p.add_argument(f"--{flag}", default=None)
    for flag in _LAMBDA_FLAGS:
        p.add_argument(f"--{flag}", default=None)
    p.add_argument("--augment", choices=["on", "off"], default=None)
    p.add_argument("--invert", choices=["on", "off"], default=None)
    p.add_argument(
        "--critic",
        default=None,
        help="target:<reference>, remote:<url>, or zero "
        f"(defaults to remote:${CRITIC_URL_ENV} when the variable is set)",
    )


def _read_config_file(path: str) -> dict[str, str]:
    values: dict[str, str] = {}
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, _, value = line.partition("=")
            values[key.strip()] = value.strip()
    return values


def _resolve_config(args: argparse.Namespace) -> tuple[TrainConfig, dict[str, str]]:
    """defaults <- config file <- command line; returns config + extras."""
    flat: dict[str, str] = {}
    if args.config:
        flat.update(_read_config_file(args.config))
    for flag in [*_CONFIG_FLAGS, *_LAMBDA_FLAGS, "augment", "invert"]:
        v = getattr(args, flag.replace("-", "_"), None)
        if v is not None:
            flat[flag] = v

    kwargs: dict = {}
    lambdas = {}
    for flag, value in flat.items():
        if flag in _CONFIG_FLAGS:
            attr, typ = _CONFIG_FLAGS[flag]
            kwargs[attr] = typ(float(value)) if typ is int else typ(value)
        elif flag in _LAMBDA_FLAGS:
            lambdas[_LAMBDA_FLAGS[flag]] = float(value)
        elif flag in ("augment", "invert"):
            if value not in _ONOFF:
                raise ValueError(f"{flag} must be on or off, got {value!r}")
            kwargs[flag] = _ONOFF[value]
        elif flag in ("sketch", "prompt", "out", "critic"):
            pass  # not TrainConfig fields; handled by the callers
        else:
            raise ValueError(f"unknown configuration key {flag!r}")
    if lambdas:
        kwargs["lambdas"] = MotionLambdas(**{**_lambda_defaults(), **lambdas})
    if "threads" not in kwargs:
        kwargs["threads"] = os.cpu_count() or 1
    extras = {k: v for k, v in flat.items() if k in ("sketch", "prompt", "out", "critic")}
    return TrainConfig(**kwargs), extras


def _lambda_defaults() -> dict:
    d = MotionLambdas()
    return {
        "translation": d.translation,
        "rotation": d.rotation,
        "scale": d.scale,
        "shear": d.shear,
    }


def _config_to_dict(config: TrainConfig) -> dict:
    d = {}
    for name, value in vars(config).items():
        if isinstance(value, MotionLambdas):
            d["lambdas"] = {
                "translation": value.translation,
                "rotation": value.rotation,
                "scale": value.scale,
                "shear": value.shear,
            }
        elif isinstance(value, tuple):
            d[name] = list(value)
        else:
            d[name] = value
    return d


def _config_from_dict(d: dict) -> TrainConfig:
    kwargs = dict(d)
    if "lambdas" in kwargs:
        kwargs["lambdas"] = MotionLambdas(**kwargs["lambdas"])
    for key in ("local_hidden", "global_hidden"):
        if key in kwargs:
            kwargs[key] = tuple(kwargs[key])
    return TrainConfig(**kwargs)


def _load_sketch(path: str, canvas: int) -> Sketch:
    with open(path, encoding="utf-8") as f:
        sketch = parse_svg(f.read())
    h, w = sketch.canvas
    if (h, w) != (canvas, canvas):
        scale = np.array([canvas / w, canvas / h])
        strokes = tuple(Stroke(s.points * scale, s.width) for s in sketch.strokes)
        sketch = Sketch(strokes, (canvas, canvas))
    return sketch


def _build_critic(descriptor: str | None, config: TrainConfig):
    if descriptor is None:
        url = os.environ.get(CRITIC_URL_ENV)
        if not url:
            raise ValueError(
                f"--critic is required (or set {CRITIC_URL_ENV} for a remote critic)"
            )
        descriptor = f"remote:{url}"
    schedule = NoiseSchedule(weighting=config.weighting)
    if descriptor == "zero":
        return ZeroCritic(), descriptor
    if descriptor.startswith("target:"):
        reference = load_reference_video(descriptor[len("target:") :])
        k, h, w = reference.shape
        if (k, h, w) != (config.frames, config.canvas, config.canvas):
            raise ValueError(
                f"reference video {reference.shape} does not match configured "
                f"({config.frames}, {config.canvas}, {config.canvas})"
            )
        return TargetVideoCritic(reference, schedule, invert=config.invert), descriptor
    if descriptor.startswith("remote:"):
        critic = RemoteCritic(descriptor[len("remote:") :])
        critic.health()
        return critic, descriptor
    raise ValueError(f"unknown critic descriptor {descriptor!r}")


def _utcnow() -> str:
    return datetime.now(timezone.utc).isoformat()


def run(argv: list[str]) -> int:
    parser = _Parser(prog="sketchmotion")
    _add_common_flags(parser)
    parser.add_argument("--from-manifest", help="replay a recorded run")
    args = parser.parse_args(argv)

    if args.from_manifest:
        with open(args.from_manifest) as f:
            manifest = json.load(f)
        config = _config_from_dict(manifest["config"])
        sketch_path = args.sketch or manifest["sketch"]
        prompt = args.prompt or manifest["prompt"]
        critic_descriptor = args.critic or manifest["critic"]
        out_dir = args.out or manifest["out"]
    else:
        config, extras = _resolve_config(args)
        sketch_path = args.sketch or extras.get("sketch")
        prompt = args.prompt if args.prompt is not None else extras.get("prompt")
        critic_descriptor = args.critic or extras.get("critic")
        out_dir = args.out or extras.get("out")
        if not sketch_path or prompt is None:
            raise ValueError("--sketch and --prompt are required")
    if not out_dir:
        raise ValueError("--out is required")

    sketch = _load_sketch(sketch_path, config.canvas)
    critic, critic_descriptor = _build_critic(critic_descriptor, config)

    os.makedirs(out_dir, exist_ok=True)
    manifest = {
        "tool": "sketchmotion",
        "version": __version__,
        "sketch": sketch_path,
        "prompt": prompt,
        "critic": critic_descriptor,
        "out": out_dir,
        "config": _config_to_dict(config),
        "started_at": _utcnow(),
        "finished_at": None,
    }
    manifest_path = os.path.join(out_dir, "manifest.json")
    with open(manifest_path, "w") as f:
        json.dump(manifest, f, indent=2)

    started = time.perf_counter()
    seq, field, log = train(sketch, prompt, critic, config, out_dir=out_dir)

    video = render_video(seq, threads=config.threads)
    write_frames(video, out_dir)
    write_gif(video, os.path.join(out_dir, "animation.gif"))
    for j in range(seq.frame_count):
        with open(os.path.join(out_dir, f"frame_{j:03d}.svg"), "w") as f:
            f.write(write_svg(seq.materialize_frame(j)))
    save_checkpoint(field, os.path.join(out_dir, "field.skmf"))
    log.write_jsonl(os.path.join(out_dir, "log.jsonl"))

    manifest["finished_at"] = _utcnow()
    manifest["elapsed_seconds"] = time.perf_counter() - started
    with open(manifest_path, "w") as f:
        json.dump(manifest, f, indent=2)
    return EXIT_OK


def sweep(argv: list[str]) -> int:
    parser = _Parser(prog="sketchmotion sweep")
    _add_common_flags(parser)
    parser.add_argument(
        "--lr-local-values",
        required=True,
        help="comma-separated local learning rates to sweep",
    )
    parser.add_argument("--csv", help="output CSV path (default <out>/sweep.csv)")
    args = parser.parse_args(argv)

    config, extras = _resolve_config(args)
    sketch_path = args.sketch or extras.get("sketch")
    prompt = args.prompt if args.prompt is not None else extras.get("prompt")
    critic_descriptor = args.critic or extras.get("critic")
    out_dir = args.out or extras.get("out")
    if not sketch_path or prompt is None or not out_dir:
        raise ValueError("--sketch, --prompt and --out are required")
    values = [float(v) for v in args.lr_local_values.split(",") if v]
    if not values:
        raise ValueError("--lr-local-values is empty")

    os.makedirs(out_dir, exist_ok=True)
    csv_path = args.csv or os.path.join(out_dir, "sweep.csv")
    rows = []
    failures = 0
    for lr in values:
        sub_config = _config_from_dict(
            {**_config_to_dict(config), "lr_local": lr}
        )
        sub_out = os.path.join(out_dir, f"lr_{lr:g}")
        os.makedirs(sub_out, exist_ok=True)
        try:
            sketch = _load_sketch(sketch_path, sub_config.canvas)
            critic, _ = _build_critic(critic_descriptor, sub_config)
            seq, field, log = train(sketch, prompt, critic, sub_config, out_dir=sub_out)
            log.write_jsonl(os.path.join(sub_out, "log.jsonl"))
            final = field.forward(sketch)
            mean_dz_local = float(np.mean(np.abs(final.dz_local)))
            mse = ""
            if getattr(critic, "reference", None) is not None:
                video = render_video(seq, threads=sub_config.threads)
                mse = f"{float(np.mean((video - critic.reference) ** 2)):.10g}"
            rows.append((f"{lr:g}", mse, f"{mean_dz_local:.10g}"))
        except Exception as e:  # keep sweeping, report at the end
            failures += 1
            print(f"sweep: lr_local={lr:g} failed: {e}", file=sys.stderr)
            rows.append((f"{lr:g}", "", ""))
    with open(csv_path, "w") as f:
        f.write("lr_local,final_target_mse,mean_abs_dz_local\n")
        for row in rows:
            f.write(",".join(row) + "\n")
    return EXIT_OK if failures == 0 else EXIT_PARSE


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        if argv and argv[0] == "sweep":
            return sweep(argv[1:])
        return run(argv)
    except SystemExit as e:  # argparse --help or usage error
        code = e.code if isinstance(e.code, int) else EXIT_PARSE
        return code
    except (SvgParseError, ValueError, OSError, json.JSONDecodeError) as e:
        print(f"sketchmotion: error: {e}", file=sys.stderr)
        return EXIT_PARSE
    except (CriticError, TrainerCriticError) as e:
        print(f"sketchmotion: critic error: {e}", file=sys.stderr)
        return EXIT_CRITIC
    except NanAbortError as e:
        print(f"sketchmotion: aborted: {e}", file=sys.stderr)
        return EXIT_NAN


if __name__ == "__main__":
    sys.exit(main())
