"""Whole-detector assembly: backbone + neck + head from a ModelConfig."""

from __future__ import annotations

from .backbone import CSPDarknet, RepVggBackbone
from .config import ModelConfig
from .errors import ConfigError, InputError
from .head import HeadOutputs, build_head
from .layers import Module
from .neck import build_neck
from .tensor import Tensor
from .weights import StoreReader, WeightStore


class DetectionModel(Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        if cfg.backbone_kind == "cspdarknet":
            bb = CSPDarknet(cfg.width_mult, cfg.depth_mult)
        elif cfg.backbone_kind == "repvgg":
            bb = RepVggBackbone(cfg.width_mult, cfg.depth_mult)
        else:
            raise ConfigError(f"unknown backbone kind {cfg.backbone_kind!r}")
        self.backbone = self.add("backbone", bb)
        self.neck = self.add(
            "neck", build_neck(cfg.neck_kind, cfg.width_mult, cfg.depth_mult)
        )
        self.head = self.add("head", build_head(cfg))

    def forward(self, x: Tensor) -> HeadOutputs:
        if x.h % 32 or x.w % 32:
            raise InputError(
                f"input spatial dims must be divisible by 32, got {x.shape}"
            )
        return self.head(self.neck(self.backbone(x)))

    def load(self, store: WeightStore) -> None:
        """Bind weights; every store entry must be consumed exactly once."""
        reader = StoreReader(store)
        self.bind(reader)
        reader.finish()

    def state_store(self) -> WeightStore:
        """Current weights as a store (reflects fused/unfused layout)."""
        entries = {}
        for path, leaf in self._leaves():
            entries.update(leaf_arrays(leaf, path))
        return WeightStore(entries)

    def _leaves(self, node: Module | None = None, path: str = ""):
        node = node or self
        kids = node.children()
        if not kids:
            yield path, node
        for name, child in kids:
            sub = f"{path}.{name}" if path else name
            yield from self._leaves(child, sub)


def leaf_arrays(leaf, path: str) -> dict:
    """Name -> array map for one bound leaf, honoring its current layout."""
    from .layers import ConvBN, PlainConv, RepVggBlock

    out = {}

    def put(suffix, arr):
        out[f"{path}.{suffix}"] = arr

    if isinstance(leaf, (ConvBN, RepVggBlock)) and leaf.fused:
        put("fused.weight", leaf.conv.weight)
        put("fused.bias", leaf.conv.bias)
    elif isinstance(leaf, ConvBN):
        put("conv.weight", leaf.conv.weight)
        for f in ("gamma", "beta", "running_mean", "running_var"):
            put(f"bn.{f}", getattr(leaf.bn, f))
    elif isinstance(leaf, RepVggBlock):
        p = leaf.params
        put("conv3.weight", p.conv3.weight)
        put("conv1.weight", p.conv1.weight)
        for branch, bn in (("bn3", p.bn3), ("bn1", p.bn1), ("id_bn", p.id_bn)):
            if bn is None:
                continue
            for f in ("gamma", "beta", "running_mean", "running_var"):
                put(f"{branch}.{f}", getattr(bn, f))
    elif isinstance(leaf, PlainConv):
        put("conv.weight", leaf.conv.weight)
        put("conv.bias", leaf.conv.bias)
    else:
        raise ConfigError(f"cannot serialize leaf at {path}: {type(leaf).__name__}")
    return out


def build_model(cfg: ModelConfig) -> DetectionModel:
    return DetectionModel(cfg)
