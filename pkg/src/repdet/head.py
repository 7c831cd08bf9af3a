"""Prediction heads: decoupled baseline and the task-aligned variant."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Tuple

from . import tensor as T
from .backbone import FeaturePyramid
from .errors import ConfigError
from .layers import (
    ConvBN,
    Module,
    PlainConv,
    RepVggBlock,
    Sequential,
    scaled_channels,
)
from .tensor import Tensor

LEVEL_NAMES = ("p3", "p4", "p5")
STRIDES = (8, 16, 32)

TOOD_STACK_MIN = 2
TOOD_STACK_MAX = 6


@dataclass(frozen=True)
class HeadOutputs:
    """Raw per-level logits in the fixed (p3, p4, p5) order."""

    cls_logits: Tuple[Tensor, ...]
    reg: Tuple[Tensor, ...]
    obj_logits: Tuple[Tensor, ...]
    strides: Tuple[int, ...] = STRIDES


def _conv_block(kind: str, c: int) -> Module:
    if kind == "vanilla":
        return ConvBN(c, c, 3)
    if kind == "rep":
        return RepVggBlock(c, c)
    raise ConfigError(f"unknown conv kind {kind!r}")


class DecoupledHead(Module):
    """Per level: 1x1 stem, then separate 2-conv cls and reg branches."""

    def __init__(self, width: float, num_classes: int):
        super().__init__()
        self.num_classes = num_classes
        c_head = scaled_channels(256, width)
        in_chs = [scaled_channels(b, width) for b in (256, 512, 1024)]
        self.per_level = []
        for name, c_in in zip(LEVEL_NAMES, in_chs):
            stem = self.add(f"stem_{name}", ConvBN(c_in, c_head, 1))
            cls_b = self.add(
                f"cls_{name}",
                Sequential(
                    ("conv0", ConvBN(c_head, c_head, 3)),
                    ("conv1", ConvBN(c_head, c_head, 3)),
                ),
            )
            reg_b = self.add(
                f"reg_{name}",
                Sequential(
                    ("conv0", ConvBN(c_head, c_head, 3)),
                    ("conv1", ConvBN(c_head, c_head, 3)),
                ),
            )
            cls_p = self.add(f"cls_pred_{name}", PlainConv(c_head, num_classes, 1))
            reg_p = self.add(f"reg_pred_{name}", PlainConv(c_head, 4, 1))
            obj_p = self.add(f"obj_pred_{name}", PlainConv(c_head, 1, 1))
            self.per_level.append((stem, cls_b, reg_b, cls_p, reg_p, obj_p))

    def forward(self, pyr: FeaturePyramid) -> HeadOutputs:
        cls_out, reg_out, obj_out = [], [], []
        for x, (stem, cls_b, reg_b, cls_p, reg_p, obj_p) in zip(
            (pyr.p3, pyr.p4, pyr.p5), self.per_level
        ):
            s = stem(x)
            cls_out.append(cls_p(cls_b(s)))
            r = reg_b(s)
            reg_out.append(reg_p(r))
            obj_out.append(obj_p(r))
        return HeadOutputs(tuple(cls_out), tuple(reg_out), tuple(obj_out))


class ToodHead(Module):
    """Shared inter-conv stack with per-task layer attention.

    Each level runs the same stack of inter blocks after its own 1x1 stem.
    For each task, the stack's pooled features (concatenated per layer, so
    stack*C values) pass through a two-layer bottleneck (stack*C -> C/4 ->
    stack) ending in a sigmoid; the resulting per-layer weights blend the
    stack outputs into a task feature, which two final conv blocks and a
    1x1 pred consume. Objectness shares the regression task feature.
    """

    def __init__(
        self,
        width: float,
        num_classes: int,
        stack: int,
        conv_kind: str = "vanilla",
        final_kind: str = "vanilla",
    ):
        super().__init__()
        if not TOOD_STACK_MIN <= stack <= TOOD_STACK_MAX:
            raise ConfigError(
                f"inter stack {stack} outside [{TOOD_STACK_MIN},{TOOD_STACK_MAX}]"
            )
        self.num_classes = num_classes
        self.stack = stack
        c = scaled_channels(256, width)
        reduce_ch = c // 4
        in_chs = [scaled_channels(b, width) for b in (256, 512, 1024)]

        self.stems = [
            self.add(f"stem_{n}", ConvBN(c_in, c, 1))
            for n, c_in in zip(LEVEL_NAMES, in_chs)
        ]
        self.inter = [
            self.add(f"inter{i}", _conv_block(conv_kind, c)) for i in range(stack)
        ]
        self.gates = {}
        for task in ("cls", "reg"):
            fc1 = self.add(f"{task}_gate_fc1",
                           PlainConv(stack * c, reduce_ch, 1, act="relu"))
            fc2 = self.add(f"{task}_gate_fc2",
                           PlainConv(reduce_ch, stack, 1, act="sigmoid"))
            self.gates[task] = (fc1, fc2)
        self.per_level = []
        for name in LEVEL_NAMES:
            cls_f = self.add(
                f"cls_final_{name}",
                Sequential(
                    ("conv0", _conv_block(final_kind, c)),
                    ("conv1", _conv_block(final_kind, c)),
                ),
            )
            reg_f = self.add(
                f"reg_final_{name}",
                Sequential(
                    ("conv0", _conv_block(final_kind, c)),
                    ("conv1", _conv_block(final_kind, c)),
                ),
            )
            cls_p = self.add(f"cls_pred_{name}", PlainConv(c, num_classes, 1))
            reg_p = self.add(f"reg_pred_{name}", PlainConv(c, 4, 1))
            obj_p = self.add(f"obj_pred_{name}", PlainConv(c, 1, 1))
            self.per_level.append((cls_f, reg_f, cls_p, reg_p, obj_p))

    def task_weights(self, feats: List[Tensor], task: str) -> Tensor:
        """Per-layer attention weights (n, stack, 1, 1), strictly in (0,1)."""
        pooled = T.concat_channels([T.global_avg_pool(f) for f in feats])
        fc1, fc2 = self.gates[task]
        return fc2(fc1(pooled))

    def forward(self, pyr: FeaturePyramid) -> HeadOutputs:
        cls_out, reg_out, obj_out = [], [], []
        for x, stem, (cls_f, reg_f, cls_p, reg_p, obj_p) in zip(
            (pyr.p3, pyr.p4, pyr.p5), self.stems, self.per_level
        ):
            f = stem(x)
            feats = []
            for blk in self.inter:
                f = blk(f)
                feats.append(f)
            t_cls = T.blend(feats, self.task_weights(feats, "cls"))
            t_reg = T.blend(feats, self.task_weights(feats, "reg"))
            cls_out.append(cls_p(cls_f(t_cls)))
            r = reg_f(t_reg)
            reg_out.append(reg_p(r))
            obj_out.append(obj_p(r))
        return HeadOutputs(tuple(cls_out), tuple(reg_out), tuple(obj_out))


def build_head(cfg) -> Module:
    if cfg.head_kind == "decoupled":
        return DecoupledHead(cfg.width_mult, cfg.num_classes)
    if cfg.head_kind == "tood":
        return ToodHead(
            cfg.width_mult,
            cfg.num_classes,
            cfg.tood_stack,
            cfg.tood_conv_kind,
            cfg.tood_final_conv_kind,
        )
    raise ConfigError(f"unknown head kind {cfg.head_kind!r}")
