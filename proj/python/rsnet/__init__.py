"""Python access to the rsnet detector library (C++ core)."""

from ._core import (
    DataError,
    Model,
    NumericError,
    ShapeError,
    UsageError,
    config_text,
    evaluate,
    haar_analysis,
    haar_synthesis,
    iou,
    nms,
    presets,
    render_scene,
    run_checks,
    run_cli,
    source_digest,
)

__all__ = [
    "DataError",
    "Model",
    "NumericError",
    "ShapeError",
    "UsageError",
    "config_text",
    "evaluate",
    "haar_analysis",
    "haar_synthesis",
    "iou",
    "nms",
    "presets",
    "render_scene",
    "run_checks",
    "run_cli",
    "source_digest",
]
