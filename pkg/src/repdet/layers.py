"""Network building blocks composed from the tensor primitives.

Blocks exist in two layouts. Training layout keeps convolutions and batch
norms separate (`conv.weight`, `bn.gamma`, ...); deploy layout is a single
biased conv (`fused.weight`, `fused.bias`). Loading picks the layout per
block by probing the store for `<path>.fused.weight`, and `fuse_()`
converts a bound block in place.

Parameter counting follows the usual reporting convention: conv weights,
biases, and BN gamma/beta are counted; BN running statistics are buffers
and are not.
"""

from __future__ import annotations

from typing import Iterator, List, Optional, Tuple

import numpy as np

from . import tensor as T
from .errors import ConfigError, FuseError, LoadError
from .reparam import RepVggBlockParams, fold_bn, repvgg_fuse
from .tensor import BatchNormParams, ConvParams, Tensor

BN_EPS = 1e-5

_ACTS = {
    "silu": T.silu,
    "relu": T.relu,
    "sigmoid": T.sigmoid,
    "none": lambda x: x,
}

_BN_FIELDS = ("gamma", "beta", "running_mean", "running_var")


def _join(prefix: str, name: str) -> str:
    return f"{prefix}.{name}" if prefix else name


def scaled_channels(base: int, width: float) -> int:
    """base * width, required to land on an integer channel count."""
    v = base * width
    iv = int(round(v))
    if abs(v - iv) > 1e-6 or iv < 1:
        raise ConfigError(
            f"width multiplier {width} gives non-integer channels for base {base}"
        )
    return iv


def scaled_depth(base: int, depth: float) -> int:
    """base * depth rounded, at least one block."""
    return max(int(round(base * depth)), 1)


def _take_checked(reader, key: str, shape: Tuple[int, ...]) -> np.ndarray:
    arr = reader.take(key)
    if tuple(arr.shape) != shape:
        raise LoadError(f"{key}: expected shape {shape}, got {tuple(arr.shape)}")
    return arr


class Module:
    """Tree node with named children; traversal order fixes weight order."""

    def __init__(self):
        self._children: List[Tuple[str, "Module"]] = []

    def add(self, name: str, child: "Module") -> "Module":
        self._children.append((name, child))
        return child

    def children(self):
        return list(self._children)

    def weight_spec(self) -> Iterator[Tuple[str, Tuple[int, ...]]]:
        """(dotted name, shape) for every stored array, training layout."""
        for name, child in self._children:
            for sub, shape in child.weight_spec():
                yield _join(name, sub), shape

    def bind(self, reader, path: str = "") -> None:
        for name, child in self._children:
            child.bind(reader, _join(path, name))

    def fuse_(self, path: str = "") -> int:
        return sum(c.fuse_(_join(path, n)) for n, c in self._children)

    def fusable_count(self) -> int:
        return sum(c.fusable_count() for _, c in self._children)

    def param_count(self) -> int:
        return sum(c.param_count() for _, c in self._children)

    def param_count_deploy(self) -> int:
        """Parameter count after every fusable block is folded."""
        return sum(c.param_count_deploy() for _, c in self._children)

    def forward(self, x: Tensor) -> Tensor:
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Sequential(Module):
    def __init__(self, *named_children: Tuple[str, Module]):
        super().__init__()
        for name, child in named_children:
            self.add(name, child)

    def forward(self, x: Tensor) -> Tensor:
        for _, child in self._children:
            x = child(x)
        return x


class ConvBN(Module):
    """Conv + batch norm + activation, foldable into one biased conv."""

    def __init__(self, c_in, c_out, k, stride=1, groups=1, act="silu"):
        super().__init__()
        self.c_in, self.c_out, self.k = c_in, c_out, k
        self.stride, self.groups = stride, groups
        self.act = _ACTS[act]
        self.fused = False
        self.conv: Optional[ConvParams] = None
        self.bn: Optional[BatchNormParams] = None

    @property
    def _wshape(self):
        return (self.c_out, self.c_in // self.groups, self.k, self.k)

    def weight_spec(self):
        yield "conv.weight", self._wshape
        for f in _BN_FIELDS:
            yield f"bn.{f}", (self.c_out,)

    def bind(self, reader, path=""):
        if reader.has(_join(path, "fused.weight")):
            w = _take_checked(reader, _join(path, "fused.weight"), self._wshape)
            b = _take_checked(reader, _join(path, "fused.bias"), (self.c_out,))
            self.conv = ConvParams(w, b, self.stride, self.k // 2, self.groups)
            self.fused = True
        else:
            w = _take_checked(reader, _join(path, "conv.weight"), self._wshape)
            self.conv = ConvParams(w, None, self.stride, self.k // 2, self.groups)
            bn = [
                _take_checked(reader, _join(path, f"bn.{f}"), (self.c_out,))
                for f in _BN_FIELDS
            ]
            self.bn = BatchNormParams(*bn, eps=BN_EPS)
            self.fused = False

    def forward(self, x: Tensor) -> Tensor:
        if self.conv is None:
            raise ConfigError("block used before weights were bound")
        y = T.conv2d(x, self.conv)
        if not self.fused:
            y = T.batch_norm_infer(y, self.bn)
        return self.act(y)

    def fuse_(self, path=""):
        if self.fused:
            return 0
        if self.conv is None:
            raise FuseError(f"no weights bound at {path or '<root>'}")
        self.conv = fold_bn(self.conv, self.bn)
        self.bn = None
        self.fused = True
        return 1

    def fusable_count(self):
        return 0 if self.fused else 1

    def param_count(self):
        w = int(np.prod(self._wshape))
        return w + self.c_out if self.fused else w + 2 * self.c_out

    def param_count_deploy(self):
        return int(np.prod(self._wshape)) + self.c_out


class PlainConv(Module):
    """Conv with bias and activation, no norm; nothing to fuse."""

    def __init__(self, c_in, c_out, k, stride=1, groups=1, act="none"):
        super().__init__()
        self.c_in, self.c_out, self.k = c_in, c_out, k
        self.stride, self.groups = stride, groups
        self.act = _ACTS[act]
        self.conv: Optional[ConvParams] = None

    @property
    def _wshape(self):
        return (self.c_out, self.c_in // self.groups, self.k, self.k)

    def weight_spec(self):
        yield "conv.weight", self._wshape
        yield "conv.bias", (self.c_out,)

    def bind(self, reader, path=""):
        w = _take_checked(reader, _join(path, "conv.weight"), self._wshape)
        b = _take_checked(reader, _join(path, "conv.bias"), (self.c_out,))
        self.conv = ConvParams(w, b, self.stride, self.k // 2, self.groups)

    def forward(self, x: Tensor) -> Tensor:
        if self.conv is None:
            raise ConfigError("block used before weights were bound")
        return self.act(T.conv2d(x, self.conv))

    def param_count(self):
        return int(np.prod(self._wshape)) + self.c_out

    def param_count_deploy(self):
        return self.param_count()


def repvgg_block_forward(x: Tensor, p: RepVggBlockParams) -> Tensor:
    """silu of the summed 3x3, 1x1, and optional identity-BN branches."""
    y = T.add(
        T.batch_norm_infer(T.conv2d(x, p.conv3), p.bn3),
        T.batch_norm_infer(T.conv2d(x, p.conv1), p.bn1),
    )
    if p.id_bn is not None:
        y = T.add(y, T.batch_norm_infer(x, p.id_bn))
    return T.silu(y)


class RepVggBlock(Module):
    """Three-branch training block that collapses to one 3x3 conv."""

    def __init__(self, c_in, c_out, stride=1, groups=1):
        super().__init__()
        self.c_in, self.c_out = c_in, c_out
        self.stride, self.groups = stride, groups
        self.with_id = c_in == c_out and stride == 1
        self.fused = False
        self.params: Optional[RepVggBlockParams] = None
        self.conv: Optional[ConvParams] = None

    def weight_spec(self):
        cg = self.c_in // self.groups
        yield "conv3.weight", (self.c_out, cg, 3, 3)
        for f in _BN_FIELDS:
            yield f"bn3.{f}", (self.c_out,)
        yield "conv1.weight", (self.c_out, cg, 1, 1)
        for f in _BN_FIELDS:
            yield f"bn1.{f}", (self.c_out,)
        if self.with_id:
            for f in _BN_FIELDS:
                yield f"id_bn.{f}", (self.c_out,)

    def _take_bn(self, reader, path, branch):
        arrs = [
            _take_checked(reader, _join(path, f"{branch}.{f}"), (self.c_out,))
            for f in _BN_FIELDS
        ]
        return BatchNormParams(*arrs, eps=BN_EPS)

    def bind(self, reader, path=""):
        cg = self.c_in // self.groups
        if reader.has(_join(path, "fused.weight")):
            w = _take_checked(reader, _join(path, "fused.weight"), (self.c_out, cg, 3, 3))
            b = _take_checked(reader, _join(path, "fused.bias"), (self.c_out,))
            self.conv = ConvParams(w, b, self.stride, 1, self.groups)
            self.fused = True
            return
        w3 = _take_checked(reader, _join(path, "conv3.weight"), (self.c_out, cg, 3, 3))
        w1 = _take_checked(reader, _join(path, "conv1.weight"), (self.c_out, cg, 1, 1))
        self.params = RepVggBlockParams(
            conv3=ConvParams(w3, None, self.stride, 1, self.groups),
            bn3=self._take_bn(reader, path, "bn3"),
            conv1=ConvParams(w1, None, self.stride, 0, self.groups),
            bn1=self._take_bn(reader, path, "bn1"),
            id_bn=self._take_bn(reader, path, "id_bn") if self.with_id else None,
        )
        self.fused = False

    def forward(self, x: Tensor) -> Tensor:
        if self.fused:
            return T.silu(T.conv2d(x, self.conv))
        if self.params is None:
            raise ConfigError("block used before weights were bound")
        return repvgg_block_forward(x, self.params)

    def fuse_(self, path=""):
        if self.fused:
            return 0
        if self.params is None:
            raise FuseError(f"no weights bound at {path or '<root>'}")
        self.conv = repvgg_fuse(self.params)
        self.params = None
        self.fused = True
        return 1

    def fusable_count(self):
        return 0 if self.fused else 1

    def param_count(self):
        cg = self.c_in // self.groups
        if self.fused:
            return self.param_count_deploy()
        n_bn = 3 if self.with_id else 2
        return (9 + 1) * cg * self.c_out + 2 * self.c_out * n_bn

    def param_count_deploy(self):
        return 9 * (self.c_in // self.groups) * self.c_out + self.c_out


class Focus(Module):
    """Space-to-depth stem: slice to 4x channels, then a 3x3 conv block."""

    def __init__(self, c_in, c_out):
        super().__init__()
        self.conv = self.add("conv", ConvBN(4 * c_in, c_out, 3))

    def forward(self, x: Tensor) -> Tensor:
        return self.conv(T.focus_slice(x))


class Bottleneck(Module):
    """1x1 reduce, 3x3 expand, optional residual."""

    def __init__(self, c_in, c_out, shortcut=True, expansion=0.5):
        super().__init__()
        hidden = int(c_out * expansion)
        self.cv1 = self.add("cv1", ConvBN(c_in, hidden, 1))
        self.cv2 = self.add("cv2", ConvBN(hidden, c_out, 3))
        self.residual = shortcut and c_in == c_out

    def forward(self, x: Tensor) -> Tensor:
        y = self.cv2(self.cv1(x))
        return T.add(x, y) if self.residual else y


class CSPLayer(Module):
    """Cross-stage block: bottleneck chain on one half, concat, 1x1 merge."""

    def __init__(self, c_in, c_out, n=1, shortcut=True, expansion=0.5):
        super().__init__()
        hidden = int(c_out * expansion)
        self.cv1 = self.add("cv1", ConvBN(c_in, hidden, 1))
        self.cv2 = self.add("cv2", ConvBN(c_in, hidden, 1))
        self.blocks = [
            self.add(f"m{i}", Bottleneck(hidden, hidden, shortcut, expansion=1.0))
            for i in range(n)
        ]
        self.cv3 = self.add("cv3", ConvBN(2 * hidden, c_out, 1))

    def forward(self, x: Tensor) -> Tensor:
        a = self.cv1(x)
        for blk in self.blocks:
            a = blk(a)
        b = self.cv2(x)
        return self.cv3(T.concat_channels([a, b]))


class SPP(Module):
    """Spatial pyramid pooling with 5/9/13 max pools."""

    KERNELS = (5, 9, 13)

    def __init__(self, c_in, c_out):
        super().__init__()
        hidden = c_in // 2
        self.cv1 = self.add("cv1", ConvBN(c_in, hidden, 1))
        self.cv2 = self.add("cv2", ConvBN(hidden * (len(self.KERNELS) + 1), c_out, 1))

    def forward(self, x: Tensor) -> Tensor:
        y = self.cv1(x)
        pools = [T.maxpool2d(y, k, 1, k // 2) for k in self.KERNELS]
        return self.cv2(T.concat_channels([y] + pools))


class GSConv(Module):
    """Half-dense, half-depthwise conv whose halves are channel-shuffled.

    The dense conv produces c_out/2 channels; a depthwise 5x5 produces the
    other half from them; shuffle with two groups interleaves the halves.
    """

    def __init__(self, c_in, c_out, k=1, stride=1, act="silu"):
        super().__init__()
        if c_out % 2:
            raise ConfigError(f"GSConv needs even c_out, got {c_out}")
        half = c_out // 2
        self.c_out = c_out
        self.cv1 = self.add("cv1", PlainConv(c_in, half, k, stride, act=act))
        self.cv2 = self.add("cv2", PlainConv(half, half, 5, 1, groups=half, act=act))

    def forward(self, x: Tensor) -> Tensor:
        y1 = self.cv1(x)
        y2 = self.cv2(y1)
        return T.channel_shuffle(T.concat_channels([y1, y2]), 2)


class GSBottleneck(Module):
    """Two stacked GSConvs (1x1 reduce, 3x3 expand) with a residual add."""

    def __init__(self, c):
        super().__init__()
        self.gs1 = self.add("gs1", GSConv(c, c // 2, 1))
        self.gs2 = self.add("gs2", GSConv(c // 2, c, 3))

    def forward(self, x: Tensor) -> Tensor:
        return T.add(x, self.gs2(self.gs1(x)))


class VoVGSCSP(Module):
    """Cross-stage block with GS bottlenecks on the working half.

    dense_cv=True keeps the three 1x1 split/merge convs as plain dense
    conv+BN blocks (the partial-replacement neck); otherwise they are
    GSConvs too.
    """

    def __init__(self, c_in, c_out, n=1, dense_cv=False):
        super().__init__()
        c_mid = c_out // 2
        make = (
            (lambda ci, co: ConvBN(ci, co, 1))
            if dense_cv
            else (lambda ci, co: GSConv(ci, co, 1))
        )
        self.cv1 = self.add("cv1", make(c_in, c_mid))
        self.cv2 = self.add("cv2", make(c_in, c_mid))
        self.blocks = [
            self.add(f"gsb{i}", GSBottleneck(c_mid)) for i in range(n)
        ]
        self.cv3 = self.add("cv3", make(2 * c_mid, c_out))

    def forward(self, x: Tensor) -> Tensor:
        a = self.cv1(x)
        for blk in self.blocks:
            a = blk(a)
        b = self.cv2(x)
        return self.cv3(T.concat_channels([a, b]))
