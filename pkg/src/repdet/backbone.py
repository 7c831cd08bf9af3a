"""Feature extractors producing the stride-8/16/32 pyramid."""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigError
from .layers import (
    ConvBN,
    CSPLayer,
    Focus,
    Module,
    RepVggBlock,
    Sequential,
    SPP,
    scaled_channels,
    scaled_depth,
)
from .tensor import Tensor


@dataclass(frozen=True)
class FeaturePyramid:
    """Three feature maps at strides 8 (p3), 16 (p4), 32 (p5)."""

    p3: Tensor
    p4: Tensor
    p5: Tensor

    def __post_init__(self):
        if not (self.p3.n == self.p4.n == self.p5.n):
            raise ConfigError("pyramid levels disagree on batch size")
        if (self.p4.h * 2, self.p4.w * 2) != (self.p3.h, self.p3.w) or (
            self.p5.h * 2,
            self.p5.w * 2,
        ) != (self.p4.h, self.p4.w):
            raise ConfigError(
                "pyramid levels must halve spatially: "
                f"{self.p3.shape} {self.p4.shape} {self.p5.shape}"
            )

    @property
    def channels(self):
        return self.p3.c, self.p4.c, self.p5.c


class CSPDarknet(Module):
    """Focus stem, four strided CSP stages, SPP bottleneck before the last."""

    def __init__(self, width: float, depth: float):
        super().__init__()
        c1, c2, c3, c4, c5 = (
            scaled_channels(b, width) for b in (64, 128, 256, 512, 1024)
        )
        n_small = scaled_depth(3, depth)
        n_big = scaled_depth(9, depth)
        self.stem = self.add("stem", Focus(3, c1))
        self.stage2 = self.add(
            "stage2",
            Sequential(
                ("conv", ConvBN(c1, c2, 3, 2)), ("csp", CSPLayer(c2, c2, n_small))
            ),
        )
        self.stage3 = self.add(
            "stage3",
            Sequential(
                ("conv", ConvBN(c2, c3, 3, 2)), ("csp", CSPLayer(c3, c3, n_big))
            ),
        )
        self.stage4 = self.add(
            "stage4",
            Sequential(
                ("conv", ConvBN(c3, c4, 3, 2)), ("csp", CSPLayer(c4, c4, n_big))
            ),
        )
        self.stage5 = self.add(
            "stage5",
            Sequential(
                ("conv", ConvBN(c4, c5, 3, 2)),
                ("spp", SPP(c5, c5)),
                ("csp", CSPLayer(c5, c5, n_small, shortcut=False)),
            ),
        )

    def forward(self, x: Tensor) -> FeaturePyramid:
        x = self.stem(x)
        x = self.stage2(x)
        p3 = self.stage3(x)
        p4 = self.stage4(p3)
        p5 = self.stage5(p4)
        return FeaturePyramid(p3, p4, p5)


class RepVggBackbone(Module):
    """Chains of re-parameterizable blocks with the same pyramid contract.

    Stage layout (blocks after the strided entry block, before depth
    scaling): 51/12/15/6 over channel bases 128/256/512/1024. The schedule
    is deliberately front-loaded: wide shallow stages keep the parameter
    count near the reference while the per-block cost stays constant. The
    last stage ends with the same SPP bottleneck as the CSP backbone.
    """

    BASE_REPEATS = (51, 12, 15, 6)

    def __init__(self, width: float, depth: float):
        super().__init__()
        chans = [scaled_channels(b, width) for b in (64, 128, 256, 512, 1024)]
        repeats = [scaled_depth(b, depth) for b in self.BASE_REPEATS]
        self.stem = self.add("stem", RepVggBlock(3, chans[0], stride=2))
        self.stages = []
        for i, n in enumerate(repeats):
            c_in, c_out = chans[i], chans[i + 1]
            parts = [("down", RepVggBlock(c_in, c_out, stride=2))]
            parts += [(f"block{j}", RepVggBlock(c_out, c_out)) for j in range(n)]
            if i == len(repeats) - 1:
                parts.append(("spp", SPP(c_out, c_out)))
            self.stages.append(self.add(f"stage{i + 2}", Sequential(*parts)))

    def forward(self, x: Tensor) -> FeaturePyramid:
        x = self.stem(x)
        x = self.stages[0](x)
        p3 = self.stages[1](x)
        p4 = self.stages[2](p3)
        p5 = self.stages[3](p4)
        return FeaturePyramid(p3, p4, p5)
