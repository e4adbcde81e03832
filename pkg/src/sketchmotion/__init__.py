"""sketchmotion: animate a static vector sketch from a text-described
motion objective by optimizing a neural displacement field against a
score-distillation signal from a pluggable video critic."""

__version__ = "0.1.0"

from .field import DisplacementField, FieldConfig, FieldOutput
from .geometry import AffineParams, MotionLambdas
from .guidance import (
    CriticRequest,
    CriticResponse,
    NoiseSchedule,
    RemoteCritic,
    TargetVideoCritic,
    ZeroCritic,
)
from .raster import render_frame, render_sketch, render_video
from .sketch import ControlPoint, MotionSequence, Sketch, Stroke
from .svg import parse_svg, write_svg
from .trainer import TrainConfig, TrainLog, train

__all__ = [
    "AffineParams",
    "ControlPoint",
    "CriticRequest",
    "CriticResponse",
    "DisplacementField",
    "FieldConfig",
    "FieldOutput",
    "MotionLambdas",
    "MotionSequence",
    "NoiseSchedule",
    "RemoteCritic",
    "Sketch",
    "Stroke",
    "TargetVideoCritic",
    "TrainConfig",
    "TrainLog",
    "ZeroCritic",
    "parse_svg",
    "render_frame",
    "render_sketch",
    "render_video",
    "train",
    "write_svg",
    "__version__",
]
