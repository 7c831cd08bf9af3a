"""Offline weight-space passes: BN folding and multi-branch collapse.

Every pass is a pure function on parameter structs; `fuse_model` applies
them over a whole module tree and returns a new tree, leaving the input
untouched. Folding math runs in float64 and is cast back to float32 once.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError
from .tensor import BatchNormParams, ConvParams


@dataclass(frozen=True)
class RepVggBlockParams:
    """Training-form three-branch block: 3x3 + 1x1 + optional identity BN."""

    conv3: ConvParams
    bn3: BatchNormParams
    conv1: ConvParams
    bn1: BatchNormParams
    id_bn: Optional[BatchNormParams] = None

    def __post_init__(self):
        if self.conv3.kernel != (3, 3):
            raise ConfigError(f"main branch kernel must be 3x3, got {self.conv3.kernel}")
        if self.conv1.kernel != (1, 1):
            raise ConfigError(f"side branch kernel must be 1x1, got {self.conv1.kernel}")
        for attr in ("c_in", "c_out", "stride", "groups"):
            a, b = getattr(self.conv3, attr), getattr(self.conv1, attr)
            if a != b:
                raise ConfigError(f"branches disagree on {attr}: {a} vs {b}")
        if self.id_bn is not None:
            if self.conv3.c_in != self.conv3.c_out or self.conv3.stride != 1:
                raise ConfigError(
                    "identity branch requires c_in == c_out and stride 1, got "
                    f"{self.conv3.c_in}->{self.conv3.c_out} stride {self.conv3.stride}"
                )


def fold_bn(conv: ConvParams, bn: BatchNormParams) -> ConvParams:
    """Fold y = bn(conv(x)) into a single biased conv."""
    if bn.gamma.shape[0] != conv.c_out:
        raise ConfigError(
            f"batch norm has {bn.gamma.shape[0]} channels, conv produces {conv.c_out}"
        )
    scale = bn.gamma.astype(np.float64) / np.sqrt(bn.running_var.astype(np.float64) + bn.eps)
    w = conv.weight.astype(np.float64) * scale[:, None, None, None]
    b0 = conv.bias.astype(np.float64) if conv.bias is not None else 0.0
    b = bn.beta.astype(np.float64) + (b0 - bn.running_mean.astype(np.float64)) * scale
    return ConvParams(
        w.astype(np.float32),
        b.astype(np.float32),
        stride=conv.stride,
        padding=conv.padding,
        groups=conv.groups,
    )


def pad_1x1_to_3x3(conv: ConvParams) -> ConvParams:
    """Embed a 1x1 kernel at the center of a zero 3x3 kernel."""
    if conv.kernel != (1, 1):
        raise ConfigError(f"expected a 1x1 kernel, got {conv.kernel}")
    w = np.pad(conv.weight, ((0, 0), (0, 0), (1, 1), (1, 1)))
    return ConvParams(w, conv.bias, stride=conv.stride, padding=1, groups=conv.groups)


def identity_to_3x3(c: int, groups: int = 1) -> ConvParams:
    """3x3 conv equal to the identity map (center dirac per channel)."""
    if c % groups != 0:
        raise ConfigError(f"channels {c} not divisible by groups {groups}")
    cg = c // groups
    w = np.zeros((c, cg, 3, 3), np.float32)
    for j in range(c):
        w[j, j % cg, 1, 1] = 1.0
    return ConvParams(w, None, stride=1, padding=1, groups=groups)


def repvgg_fuse(block: RepVggBlockParams) -> ConvParams:
    """Collapse the three branches into one biased 3x3 conv.

    silu(fused(x)) reproduces the multi-branch forward for any x.
    """
    k3 = fold_bn(block.conv3, block.bn3)
    k1 = pad_1x1_to_3x3(fold_bn(block.conv1, block.bn1))
    w = k3.weight.astype(np.float64) + k1.weight.astype(np.float64)
    b = k3.bias.astype(np.float64) + k1.bias.astype(np.float64)
    if block.id_bn is not None:
        kid = fold_bn(
            identity_to_3x3(block.conv3.c_in, block.conv3.groups), block.id_bn
        )
        w += kid.weight.astype(np.float64)
        b += kid.bias.astype(np.float64)
    return ConvParams(
        w.astype(np.float32),
        b.astype(np.float32),
        stride=block.conv3.stride,
        padding=1,
        groups=block.conv3.groups,
    )


def fuse_model(model, export=None):
    """Deep-copy the model and fold every fusable block into deploy form.

    Idempotent: a second application is a no-op. The input model is never
    modified. Raises FuseError (naming the node) if a block has no weights
    bound yet.
    """
    fused = copy.deepcopy(model)
    fused.fuse_()
    return fused


def fusable_count(model) -> int:
    """Number of blocks still in training form (what fuse_model would fold)."""
    return model.fusable_count()
