"""Anchor-free detector inference with offline graph fusion.

The package builds YOLO-style detection models (CSP or re-parameterizable
VGG-like backbones, several neck variants, decoupled or task-aligned
heads) on a small numpy tensor core, folds their multi-branch blocks into
deploy form, and runs an end-to-end predict pipeline with per-stage
timing.
"""

from .analysis import CostReport, cost_report, count_flops, count_params
from .config import (
    ExportConfig,
    ModelConfig,
    apply_overrides,
    load_config,
    parse_config,
    render_config,
)
from .errors import (
    BadChecksumError,
    BadMagicError,
    BadVersionError,
    ConfigError,
    FuseError,
    InputError,
    LoadError,
    RepdetError,
)
from .image_io import Image, annotate, read_ppm, write_ppm
from .model import DetectionModel, build_model
from .postprocess import (
    Detection,
    LetterboxMeta,
    batched_nms,
    decode_outputs,
    iou,
    nms,
    postprocess_outputs,
    scale_coords,
)
from .predictor import (
    Pipeline,
    StageTiming,
    benchmark,
    benchmark_grid,
    build_pipeline,
    predict_end2end,
    predict_many,
    preprocess_letterbox,
)
from .reparam import RepVggBlockParams, fold_bn, fuse_model, repvgg_fuse
from .weights import (
    StoreReader,
    WeightStore,
    init_random,
    load_weights,
    save_weights,
)

__version__ = "0.1.0"

__all__ = [
    "BadChecksumError",
    "BadMagicError",
    "BadVersionError",
    "ConfigError",
    "CostReport",
    "Detection",
    "DetectionModel",
    "ExportConfig",
    "FuseError",
    "Image",
    "InputError",
    "LetterboxMeta",
    "LoadError",
    "ModelConfig",
    "Pipeline",
    "RepVggBlockParams",
    "RepdetError",
    "StageTiming",
    "StoreReader",
    "WeightStore",
    "annotate",
    "apply_overrides",
    "batched_nms",
    "benchmark",
    "benchmark_grid",
    "build_model",
    "build_pipeline",
    "cost_report",
    "count_flops",
    "count_params",
    "decode_outputs",
    "fold_bn",
    "fuse_model",
    "init_random",
    "iou",
    "load_config",
    "load_weights",
    "nms",
    "parse_config",
    "postprocess_outputs",
    "predict_end2end",
    "predict_many",
    "preprocess_letterbox",
    "read_ppm",
    "render_config",
    "repvgg_fuse",
    "save_weights",
    "scale_coords",
    "write_ppm",
]
