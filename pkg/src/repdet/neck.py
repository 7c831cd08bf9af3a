"""Pyramid fusion necks: PAFPN (dense or GSConv) and the ASFF variants.

Level indexing for the ASFF code follows the coarse-to-fine convention:
level 0 is p5 (stride 32), level 1 is p4, level 2 is p3.
"""

from __future__ import annotations

from . import tensor as T
from .backbone import FeaturePyramid
from .errors import ConfigError
from .layers import (
    ConvBN,
    CSPLayer,
    GSConv,
    Module,
    PlainConv,
    Sequential,
    VoVGSCSP,
    scaled_channels,
    scaled_depth,
)
from .tensor import Tensor

PAFPN_MODES = ("dense", "gs_all", "gs_part")


class PAFPN(Module):
    """Top-down then bottom-up fusion; same channel widths in as out.

    mode picks the block family: "dense" is the conv+CSP baseline,
    "gs_all" swaps every block for its GSConv counterpart, "gs_part" swaps
    only the two widest fusion blocks (the 512-channel post-concat ones)
    and keeps laterals and downsamplers dense.
    """

    def __init__(self, width: float, depth: float, mode: str = "dense"):
        super().__init__()
        if mode not in PAFPN_MODES:
            raise ConfigError(f"unknown neck mode {mode!r}")
        c3, c4, c5 = (scaled_channels(b, width) for b in (256, 512, 1024))
        n = scaled_depth(3, depth)

        if mode == "gs_all":
            lat = lambda ci, co: GSConv(ci, co, 1)
            down = lambda c: GSConv(c, c, 3, stride=2)
            fuse = lambda ci, co: VoVGSCSP(ci, co, n)
            wide_fuse = fuse
        else:
            lat = lambda ci, co: ConvBN(ci, co, 1)
            down = lambda c: ConvBN(c, c, 3, 2)
            fuse = lambda ci, co: CSPLayer(ci, co, n, shortcut=False)
            if mode == "gs_part":
                wide_fuse = lambda ci, co: VoVGSCSP(ci, co, n, dense_cv=True)
            else:
                wide_fuse = fuse

        self.lateral_p5 = self.add("lateral_p5", lat(c5, c4))
        self.fuse_p4 = self.add("fuse_p4", wide_fuse(2 * c4, c4))
        self.lateral_p4 = self.add("lateral_p4", lat(c4, c3))
        self.fuse_p3 = self.add("fuse_p3", fuse(2 * c3, c3))
        self.down_p3 = self.add("down_p3", down(c3))
        self.fuse_n3 = self.add("fuse_n3", fuse(2 * c3, c4))
        self.down_n3 = self.add("down_n3", down(c4))
        self.fuse_n4 = self.add("fuse_n4", wide_fuse(2 * c4, c5))

    def forward(self, pyr: FeaturePyramid) -> FeaturePyramid:
        t5 = self.lateral_p5(pyr.p5)
        m4 = self.fuse_p4(T.concat_channels([T.upsample_nearest_2x(t5), pyr.p4]))
        t4 = self.lateral_p4(m4)
        o3 = self.fuse_p3(T.concat_channels([T.upsample_nearest_2x(t4), pyr.p3]))
        o4 = self.fuse_n3(T.concat_channels([self.down_p3(o3), t4]))
        o5 = self.fuse_n4(T.concat_channels([self.down_n3(o4), t5]))
        return FeaturePyramid(o3, o4, o5)


def asff_sim_unify(pyr: FeaturePyramid, from_level: int, to_level: int) -> Tensor:
    """Parameter-free resize between pyramid levels.

    One octave down: focus slice (4x channels, half resolution) then group
    means down to the coarser level's channel count. One octave up: nearest
    upsample then group means. Two octaves apply the rule twice, passing
    through the intermediate level's channel count.
    """
    if not (0 <= from_level <= 2 and 0 <= to_level <= 2):
        raise ConfigError(f"bad pyramid level: {from_level} -> {to_level}")
    by_level = (pyr.p5, pyr.p4, pyr.p3)
    x = by_level[from_level]
    lv = from_level
    while lv > to_level:  # finer -> coarser
        x = T.channel_group_mean(T.focus_slice(x), by_level[lv - 1].c)
        lv -= 1
    while lv < to_level:  # coarser -> finer
        x = T.channel_group_mean(T.upsample_nearest_2x(x), by_level[lv + 1].c)
        lv += 1
    return x


class AsffFuse(Module):
    """Softmax-gated fusion of all three levels into one target level.

    Learned mode resizes with 1x1 compressions + nearest upsampling going
    finer and strided 3x3 convs going coarser (two octaves down insert a
    stride-2 max pool first). Sim mode resizes with asff_sim_unify and
    nothing learned. Gate logits come from small per-source convs whose
    planes are concatenated, mixed by a 1x1 conv, and softmaxed across the
    three sources.
    """

    GATE_CH = 2

    def __init__(self, level: int, c3: int, c4: int, c5: int, sim: bool):
        super().__init__()
        self.level = level
        self.sim = sim
        c_by_level = (c5, c4, c3)
        c_t = c_by_level[level]
        if not sim:
            if level == 0:
                self.add("down_p4", ConvBN(c4, c_t, 3, 2))
                self.add("down_p3", ConvBN(c3, c_t, 3, 2))
            elif level == 1:
                self.add("shrink_p5", ConvBN(c5, c_t, 1))
                self.add("down_p3", ConvBN(c3, c_t, 3, 2))
            else:
                self.add("shrink_p5", ConvBN(c5, c_t, 1))
                self.add("shrink_p4", ConvBN(c4, c_t, 1))
        self._resize = {name: mod for name, mod in self.children()}
        for src in ("p5", "p4", "p3"):
            self.add(f"score_{src}", ConvBN(c_t, self.GATE_CH, 1))
        self.add("choose", PlainConv(3 * self.GATE_CH, 3, 1))
        self.add("expand", ConvBN(c_t, c_t, 1 if sim else 3))
        self._named = dict(self.children())

    def _resized(self, pyr: FeaturePyramid):
        if self.sim:
            return [asff_sim_unify(pyr, src, self.level) for src in (0, 1, 2)]
        r = self._resize
        if self.level == 0:
            return [
                pyr.p5,
                r["down_p4"](pyr.p4),
                r["down_p3"](T.maxpool2d(pyr.p3, 3, 2, 1)),
            ]
        if self.level == 1:
            return [
                T.upsample_nearest_2x(r["shrink_p5"](pyr.p5)),
                pyr.p4,
                r["down_p3"](pyr.p3),
            ]
        return [
            T.upsample_nearest_2x(T.upsample_nearest_2x(r["shrink_p5"](pyr.p5))),
            T.upsample_nearest_2x(r["shrink_p4"](pyr.p4)),
            pyr.p3,
        ]

    def gates(self, pyr: FeaturePyramid) -> Tensor:
        """The three softmax weight planes (n, 3, h_t, w_t); they sum to 1."""
        resized = self._resized(pyr)
        return self._gates_of(resized)

    def _gates_of(self, resized) -> Tensor:
        m = self._named
        planes = [
            m[f"score_{src}"](x) for src, x in zip(("p5", "p4", "p3"), resized)
        ]
        logits = m["choose"](T.concat_channels(planes))
        return T.softmax_channels(logits)

    def forward(self, pyr: FeaturePyramid) -> Tensor:
        resized = self._resized(pyr)
        gates = self._gates_of(resized)
        return self._named["expand"](T.blend(resized, gates))


class AsffNeck(Module):
    """PAFPN followed by one ASFF fusion block per output level."""

    def __init__(self, width: float, depth: float, sim: bool):
        super().__init__()
        c3, c4, c5 = (scaled_channels(b, width) for b in (256, 512, 1024))
        self.base = self.add("pafpn", PAFPN(width, depth))
        self.fuse_p5 = self.add("asff_p5", AsffFuse(0, c3, c4, c5, sim))
        self.fuse_p4 = self.add("asff_p4", AsffFuse(1, c3, c4, c5, sim))
        self.fuse_p3 = self.add("asff_p3", AsffFuse(2, c3, c4, c5, sim))

    def forward(self, pyr: FeaturePyramid) -> FeaturePyramid:
        mid = self.base(pyr)
        return FeaturePyramid(
            self.fuse_p3(mid), self.fuse_p4(mid), self.fuse_p5(mid)
        )


def build_neck(kind: str, width: float, depth: float) -> Module:
    if kind == "pafpn":
        return PAFPN(width, depth)
    if kind == "gsconv_all":
        return PAFPN(width, depth, mode="gs_all")
    if kind == "gsconv_part":
        return PAFPN(width, depth, mode="gs_part")
    if kind == "asff":
        return AsffNeck(width, depth, sim=False)
    if kind == "asff_sim":
        return AsffNeck(width, depth, sim=True)
    raise ConfigError(f"unknown neck kind {kind!r}")
