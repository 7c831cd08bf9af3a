"""Minimal NCHW tensor type and the numeric primitives built on numpy.

Data is always float32; convolution accumulates every output element in
float64 before rounding back, which keeps fused/unfused comparisons stable
at 1e-5 tolerances across platforms. Padding is zero-fill only.

A process-global cost tracker can be installed (see `set_cost_tracker`);
when active, each primitive reports either multiply-accumulate counts
(convolutions) or touched output elements (everything else).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError

# ---------------------------------------------------------------------------
# cost tracking hook

_TRACKER = None


def set_cost_tracker(tracker):
    """Install (or clear, with None) the global op-cost tracker. Returns the old one."""
    global _TRACKER
    prev = _TRACKER
    _TRACKER = tracker
    return prev


def _count_conv(macs: int) -> None:
    if _TRACKER is not None:
        _TRACKER.add_macs(macs)


def _count_elems(n: int) -> None:
    if _TRACKER is not None:
        _TRACKER.add_elems(n)


# ---------------------------------------------------------------------------
# types


class Tensor:
    """Immutable rank-4 (n, c, h, w) float32 tensor."""

    __slots__ = ("data",)

    def __init__(self, data: np.ndarray):
        if not isinstance(data, np.ndarray) or data.ndim != 4:
            raise ConfigError(
                f"tensor must be a rank-4 array, got "
                f"{getattr(data, 'shape', type(data).__name__)}"
            )
        if data.dtype != np.float32:
            raise ConfigError(f"tensor dtype must be float32, got {data.dtype}")
        if min(data.shape) < 1:
            raise ConfigError(f"tensor dims must be positive, got {data.shape}")
        data = np.ascontiguousarray(data)
        data.flags.writeable = False
        object.__setattr__(self, "data", data)

    def __setattr__(self, name, value):  # pragma: no cover - guard only
        raise AttributeError("Tensor is immutable")

    @staticmethod
    def from_array(arr) -> "Tensor":
        """Build from any numeric array-like, casting to float32."""
        a = np.asarray(arr, dtype=np.float32)
        return Tensor(a)

    @property
    def shape(self):
        return self.data.shape

    @property
    def n(self):
        return self.data.shape[0]

    @property
    def c(self):
        return self.data.shape[1]

    @property
    def h(self):
        return self.data.shape[2]

    @property
    def w(self):
        return self.data.shape[3]

    def __repr__(self):
        return f"Tensor{self.data.shape}"


def _wrap(arr: np.ndarray) -> Tensor:
    return Tensor(np.ascontiguousarray(arr, dtype=np.float32))


@dataclass
class ConvParams:
    """Convolution weights: (c_out, c_in/groups, kh, kw), optional bias."""

    weight: np.ndarray
    bias: Optional[np.ndarray] = None
    stride: int = 1
    padding: int = 0
    groups: int = 1

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float32)
        if self.weight.ndim != 4:
            raise ConfigError(f"conv weight must be rank 4, got {self.weight.shape}")
        if self.bias is not None:
            self.bias = np.asarray(self.bias, dtype=np.float32)
            if self.bias.shape != (self.weight.shape[0],):
                raise ConfigError(
                    f"conv bias shape {self.bias.shape} does not match "
                    f"c_out={self.weight.shape[0]}"
                )
        if self.stride < 1 or self.padding < 0 or self.groups < 1:
            raise ConfigError(
                f"bad conv hyperparameters: stride={self.stride} "
                f"padding={self.padding} groups={self.groups}"
            )
        if self.weight.shape[0] % self.groups != 0:
            raise ConfigError(
                f"c_out={self.weight.shape[0]} not divisible by groups={self.groups}"
            )

    @property
    def c_out(self) -> int:
        return self.weight.shape[0]

    @property
    def c_in(self) -> int:
        return self.weight.shape[1] * self.groups

    @property
    def kernel(self):
        return self.weight.shape[2], self.weight.shape[3]


@dataclass
class BatchNormParams:
    """Inference-time batch norm statistics for one channel axis."""

    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = 1e-5

    def __post_init__(self):
        self.gamma = np.asarray(self.gamma, dtype=np.float32)
        self.beta = np.asarray(self.beta, dtype=np.float32)
        self.running_mean = np.asarray(self.running_mean, dtype=np.float32)
        self.running_var = np.asarray(self.running_var, dtype=np.float32)
        c = self.gamma.shape
        for name in ("beta", "running_mean", "running_var"):
            if getattr(self, name).shape != c:
                raise ConfigError(f"batch norm {name} shape mismatch: {c} vs "
                                  f"{getattr(self, name).shape}")
        if self.gamma.ndim != 1:
            raise ConfigError(f"batch norm parameters must be rank 1, got {c}")
        if np.any(self.running_var < 0):
            raise ConfigError("batch norm running_var must be non-negative")
        if self.eps <= 0:
            raise ConfigError(f"batch norm eps must be positive, got {self.eps}")

    @property
    def channels(self) -> int:
        return self.gamma.shape[0]


# ---------------------------------------------------------------------------
# primitives


def conv_out_hw(h: int, w: int, p: ConvParams):
    kh, kw = p.kernel
    h_out = (h + 2 * p.padding - kh) // p.stride + 1
    w_out = (w + 2 * p.padding - kw) // p.stride + 1
    return h_out, w_out


def conv2d(x: Tensor, p: ConvParams) -> Tensor:
    """2-D convolution (cross-correlation), float64 accumulation per element."""
    n, c, h, w = x.shape
    if c != p.c_in:
        raise ConfigError(
            f"conv2d channel mismatch: input {x.shape} vs weight "
            f"{p.weight.shape} with groups={p.groups}"
        )
    kh, kw = p.kernel
    h_out, w_out = conv_out_hw(h, w, p)
    if h_out < 1 or w_out < 1:
        raise ConfigError(
            f"conv2d output would be empty: input {x.shape}, weight "
            f"{p.weight.shape}, stride={p.stride}, padding={p.padding}"
        )

    src = x.data
    if p.padding > 0:
        src = np.pad(
            src,
            ((0, 0), (0, 0), (p.padding, p.padding), (p.padding, p.padding)),
            mode="constant",
        )
    win = sliding_window_view(src, (kh, kw), axis=(2, 3))
    win = win[:, :, :: p.stride, :: p.stride]  # (n, c, h_out, w_out, kh, kw)

    c_out, c_pg = p.c_out, p.weight.shape[1]
    if p.groups == 1:
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(
            n * h_out * w_out, c * kh * kw
        ).astype(np.float64)
        wmat = p.weight.reshape(c_out, c * kh * kw).astype(np.float64)
        out = cols @ wmat.T
        out = out.reshape(n, h_out, w_out, c_out).transpose(0, 3, 1, 2)
    elif p.groups == c and c_out == c:
        # depthwise: one kernel per channel
        out = np.einsum(
            "ncijab,cab->ncij",
            win.astype(np.float64),
            p.weight.reshape(c, kh, kw).astype(np.float64),
        )
    else:
        out = np.empty((n, c_out, h_out, w_out), dtype=np.float64)
        opg = c_out // p.groups
        for g in range(p.groups):
            sub = win[:, g * c_pg : (g + 1) * c_pg]
            cols = sub.transpose(0, 2, 3, 1, 4, 5).reshape(
                n * h_out * w_out, c_pg * kh * kw
            ).astype(np.float64)
            wmat = p.weight[g * opg : (g + 1) * opg].reshape(
                opg, c_pg * kh * kw
            ).astype(np.float64)
            sub_out = cols @ wmat.T
            out[:, g * opg : (g + 1) * opg] = sub_out.reshape(
                n, h_out, w_out, opg
            ).transpose(0, 3, 1, 2)

    if p.bias is not None:
        out = out + p.bias.astype(np.float64)[None, :, None, None]
    _count_conv(kh * kw * c_pg * c_out * h_out * w_out * n)
    return _wrap(out)


def batch_norm_infer(x: Tensor, p: BatchNormParams) -> Tensor:
    """y = gamma * (x - mean) / sqrt(var + eps) + beta, per channel."""
    if x.c != p.channels:
        raise ConfigError(
            f"batch norm channel mismatch: input {x.shape} vs {p.channels} channels"
        )
    scale = p.gamma.astype(np.float64) / np.sqrt(
        p.running_var.astype(np.float64) + p.eps
    )
    shift = p.beta.astype(np.float64) - p.running_mean.astype(np.float64) * scale
    out = x.data * scale.astype(np.float32)[None, :, None, None] + shift.astype(
        np.float32
    )[None, :, None, None]
    _count_elems(out.size)
    return _wrap(out)


def _sigmoid_array(v: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(v, dtype=np.float32)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


def sigmoid(x: Tensor) -> Tensor:
    _count_elems(x.data.size)
    return _wrap(_sigmoid_array(x.data))


def silu(x: Tensor) -> Tensor:
    """x * sigmoid(x)."""
    _count_elems(x.data.size)
    return _wrap(x.data * _sigmoid_array(x.data))


def relu(x: Tensor) -> Tensor:
    _count_elems(x.data.size)
    return _wrap(np.maximum(x.data, 0.0))


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ConfigError(f"add shape mismatch: {a.shape} vs {b.shape}")
    _count_elems(a.data.size)
    return _wrap(a.data + b.data)


def concat_channels(xs: Sequence[Tensor]) -> Tensor:
    base = xs[0].shape
    for t in xs[1:]:
        if (t.n, t.h, t.w) != (base[0], base[2], base[3]):
            raise ConfigError(
                f"concat spatial mismatch: {base} vs {t.shape}"
            )
    out = np.concatenate([t.data for t in xs], axis=1)
    _count_elems(out.size)
    return _wrap(out)


def maxpool2d(x: Tensor, kernel: int, stride: int = 1, padding: int = 0) -> Tensor:
    n, c, h, w = x.shape
    h_out = (h + 2 * padding - kernel) // stride + 1
    w_out = (w + 2 * padding - kernel) // stride + 1
    if h_out < 1 or w_out < 1:
        raise ConfigError(
            f"maxpool output would be empty: input {x.shape}, kernel={kernel}, "
            f"stride={stride}, padding={padding}"
        )
    src = x.data
    if padding > 0:
        src = np.pad(
            src,
            ((0, 0), (0, 0), (padding, padding), (padding, padding)),
            mode="constant",
            constant_values=-np.inf,
        )
    win = sliding_window_view(src, (kernel, kernel), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]
    out = win.max(axis=(4, 5))
    _count_elems(kernel * kernel * out.size)
    return _wrap(out)


def upsample_nearest_2x(x: Tensor) -> Tensor:
    out = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)
    _count_elems(out.size)
    return _wrap(out)


def focus_slice(x: Tensor) -> Tensor:
    """Space-to-depth: (n, c, h, w) -> (n, 4c, h/2, w/2).

    Each input channel q expands to four output channels 4q+r sampling the
    (even,even), (odd,even), (even,odd), (odd,odd) row/col phases for
    r = 0, 1, 2, 3 respectively.
    """
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ConfigError(f"focus_slice needs even spatial dims, got {x.shape}")
    v = x.data.reshape(n, c, h // 2, 2, w // 2, 2)
    # channel tuple (q, rj, ri) flattens to 4q + 2*rj + ri = 4q + r
    v = v.transpose(0, 1, 5, 3, 2, 4).reshape(n, 4 * c, h // 2, w // 2)
    _count_elems(v.size)
    return _wrap(v)


def channel_shuffle(x: Tensor, groups: int) -> Tensor:
    """Permute channels: output (j mod g)*(c/g) + j//g takes input channel j."""
    n, c, h, w = x.shape
    if c % groups != 0:
        raise ConfigError(f"channel_shuffle: c={c} not divisible by groups={groups}")
    out = x.data.reshape(n, c // groups, groups, h, w).swapaxes(1, 2).reshape(
        n, c, h, w
    )
    _count_elems(out.size)
    return _wrap(out)


def channel_group_mean(x: Tensor, c_out: int) -> Tensor:
    """Mean over consecutive groups of c/c_out channels."""
    n, c, h, w = x.shape
    if c % c_out != 0:
        raise ConfigError(
            f"channel_group_mean: c={c} not divisible by c_out={c_out}"
        )
    g = c // c_out
    out = x.data.reshape(n, c_out, g, h, w).mean(axis=2, dtype=np.float64)
    _count_elems(x.data.size)
    return _wrap(out)


def softmax_channels(x: Tensor) -> Tensor:
    """Numerically stable softmax across the channel axis."""
    v = x.data.astype(np.float64)
    v = v - v.max(axis=1, keepdims=True)
    e = np.exp(v)
    out = e / e.sum(axis=1, keepdims=True)
    _count_elems(3 * x.data.size)
    return _wrap(out)


def global_avg_pool(x: Tensor) -> Tensor:
    """Spatial mean per channel, kept rank-4 as (n, c, 1, 1)."""
    out = x.data.mean(axis=(2, 3), keepdims=True, dtype=np.float64)
    _count_elems(x.data.size)
    return _wrap(out)


def blend(xs: Sequence[Tensor], gates: Tensor) -> Tensor:
    """Sum of xs[l] scaled by the gate plane gates[:, l].

    gates has one channel per input and broadcasts spatially, so both
    per-pixel fusion weights (n, L, h, w) and per-layer scalars (n, L, 1, 1)
    work.
    """
    if gates.c != len(xs):
        raise ConfigError(
            f"blend needs one gate channel per input: {gates.c} vs {len(xs)}"
        )
    acc = xs[0].data.astype(np.float64) * gates.data[:, 0:1]
    for l in range(1, len(xs)):
        if xs[l].shape != xs[0].shape:
            raise ConfigError(
                f"blend shape mismatch: {xs[0].shape} vs {xs[l].shape}"
            )
        acc += xs[l].data.astype(np.float64) * gates.data[:, l : l + 1]
    _count_elems(2 * len(xs) * xs[0].data.size)
    return _wrap(acc)
