"""Flat key=value model configuration.

One `key = value` pair per line, `#` starts a comment, blank lines are
skipped. Unknown keys are rejected; every parse error carries the line
number. An empty file yields the default small CSPDarknet + PAFPN +
decoupled-head detector.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Tuple

from .errors import ConfigError

BACKBONES = ("cspdarknet", "repvgg")
NECKS = ("pafpn", "asff", "asff_sim", "gsconv_all", "gsconv_part")
HEADS = ("decoupled", "tood")
CONV_KINDS = ("vanilla", "rep")
NMS_MODES = ("standard", "batched")

TOOD_STACK_MIN = 2
TOOD_STACK_MAX = 6


@dataclass(frozen=True)
class ModelConfig:
    backbone_kind: str = "cspdarknet"
    neck_kind: str = "pafpn"
    head_kind: str = "decoupled"
    tood_stack: int = 3
    tood_conv_kind: str = "vanilla"
    tood_final_conv_kind: str = "vanilla"
    width_mult: float = 0.5
    depth_mult: float = 0.33
    num_classes: int = 80
    input_size: Tuple[int, int] = (640, 640)


@dataclass(frozen=True)
class ExportConfig:
    fuse_reparam: bool = False
    fuse_preprocess: bool = False
    nms_mode: str = "standard"
    score_thresh: float = 0.01
    iou_thresh: float = 0.65
    max_detections: int = 300


def _p_choice(options):
    def parse(s: str):
        if s not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {s!r}")
        return s

    return parse


def _p_bool(s: str) -> bool:
    low = s.lower()
    if low == "true":
        return True
    if low == "false":
        return False
    raise ValueError(f"expected true or false, got {s!r}")


def _p_float(lo: float, hi: float):
    def parse(s: str) -> float:
        try:
            v = float(s)
        except ValueError:
            raise ValueError(f"expected a number, got {s!r}") from None
        if not lo < v <= hi:
            raise ValueError(f"value {v} outside ({lo}, {hi}]")
        return v

    return parse


def _p_int(lo: int, hi: int | None = None, what: str = "value"):
    def parse(s: str) -> int:
        try:
            v = int(s)
        except ValueError:
            raise ValueError(f"expected an integer, got {s!r}") from None
        if v < lo or (hi is not None and v > hi):
            span = f"[{lo},{hi}]" if hi is not None else f">= {lo}"
            raise ValueError(f"{what} {v} outside {span}")
        return v

    return parse


def _p_side(s: str) -> int:
    try:
        v = int(s)
    except ValueError:
        raise ValueError(f"expected an integer, got {s!r}") from None
    if v < 32 or v % 32 != 0:
        raise ValueError(f"input side {v} must be a positive multiple of 32")
    return v


# key -> (config section, field, parser). Input sides are folded into the
# (h, w) tuple after parsing.
_KEYS = {
    "model.backbone": ("model", "backbone_kind", _p_choice(BACKBONES)),
    "model.neck": ("model", "neck_kind", _p_choice(NECKS)),
    "model.width": ("model", "width_mult", _p_float(0.0, 8.0)),
    "model.depth": ("model", "depth_mult", _p_float(0.0, 8.0)),
    "model.num_classes": ("model", "num_classes", _p_int(1, what="num_classes")),
    "model.input_h": ("model", "_input_h", _p_side),
    "model.input_w": ("model", "_input_w", _p_side),
    "head.kind": ("model", "head_kind", _p_choice(HEADS)),
    "head.tood_stack": (
        "model",
        "tood_stack",
        _p_int(TOOD_STACK_MIN, TOOD_STACK_MAX, what="head.tood_stack"),
    ),
    "head.tood_conv": ("model", "tood_conv_kind", _p_choice(CONV_KINDS)),
    "head.tood_final_conv": ("model", "tood_final_conv_kind", _p_choice(CONV_KINDS)),
    "export.fuse_reparam": ("export", "fuse_reparam", _p_bool),
    "export.fuse_preprocess": ("export", "fuse_preprocess", _p_bool),
    "export.nms": ("export", "nms_mode", _p_choice(NMS_MODES)),
    "export.score_thresh": ("export", "score_thresh", _p_float(0.0, 1.0)),
    "export.iou_thresh": ("export", "iou_thresh", _p_float(0.0, 1.0)),
    "export.max_detections": (
        "export",
        "max_detections",
        _p_int(1, what="max_detections"),
    ),
}


def parse_config(text: str) -> Tuple[ModelConfig, ExportConfig]:
    model_kw = {}
    export_kw = {}
    seen = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw.strip()!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in _KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(
                f"line {lineno}: duplicate key {key!r} (first set on line {seen[key]})"
            )
        seen[key] = lineno
        section, field, parser = _KEYS[key]
        try:
            parsed = parser(value)
        except ValueError as e:
            raise ConfigError(f"line {lineno}: {key}: {e}") from None
        (model_kw if section == "model" else export_kw)[field] = parsed

    h = model_kw.pop("_input_h", 640)
    w = model_kw.pop("_input_w", 640)
    model_kw["input_size"] = (h, w)
    return ModelConfig(**model_kw), ExportConfig(**export_kw)


def load_config(path) -> Tuple[ModelConfig, ExportConfig]:
    with open(path, "r", encoding="utf-8") as f:
        return parse_config(f.read())


def apply_overrides(mc: ModelConfig, ec: ExportConfig, pairs) -> Tuple[ModelConfig, ExportConfig]:
    """Apply `key=value` strings (CLI --set) on top of parsed configs."""
    for i, pair in enumerate(pairs, start=1):
        if "=" not in pair:
            raise ConfigError(f"override {i}: expected key=value, got {pair!r}")
        key, _, value = pair.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in _KEYS:
            raise ConfigError(f"override {i}: unknown key {key!r}")
        section, field, parser = _KEYS[key]
        try:
            parsed = parser(value)
        except ValueError as e:
            raise ConfigError(f"override {i}: {key}: {e}") from None
        if field == "_input_h":
            mc = replace(mc, input_size=(parsed, mc.input_size[1]))
        elif field == "_input_w":
            mc = replace(mc, input_size=(mc.input_size[0], parsed))
        elif section == "model":
            mc = replace(mc, **{field: parsed})
        else:
            ec = replace(ec, **{field: parsed})
    return mc, ec


def render_config(mc: ModelConfig, ec: ExportConfig) -> str:
    """Config text that parses back to exactly (mc, ec)."""
    lines = [
        f"model.backbone = {mc.backbone_kind}",
        f"model.neck = {mc.neck_kind}",
        f"model.width = {mc.width_mult}",
        f"model.depth = {mc.depth_mult}",
        f"model.num_classes = {mc.num_classes}",
        f"model.input_h = {mc.input_size[0]}",
        f"model.input_w = {mc.input_size[1]}",
        f"head.kind = {mc.head_kind}",
        f"head.tood_stack = {mc.tood_stack}",
        f"head.tood_conv = {mc.tood_conv_kind}",
        f"head.tood_final_conv = {mc.tood_final_conv_kind}",
        f"export.fuse_reparam = {str(ec.fuse_reparam).lower()}",
        f"export.fuse_preprocess = {str(ec.fuse_preprocess).lower()}",
        f"export.nms = {ec.nms_mode}",
        f"export.score_thresh = {ec.score_thresh}",
        f"export.iou_thresh = {ec.iou_thresh}",
        f"export.max_detections = {ec.max_detections}",
    ]
    return "\n".join(lines) + "\n"
