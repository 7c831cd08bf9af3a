"""Parameter and operation accounting for configured models.

"Flops" here means multiply-accumulate counts plus per-element work, the
YOLO-family reporting convention: a convolution contributes
k^2 * c_in/groups * c_out * h_out * w_out, elementwise ops (BN,
activations, adds, resamplings) contribute one unit per output element.
Counts come from the tensor layer's cost hook during a real forward pass,
so they reflect the model's current layout (fused or not).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np

from .tensor import Tensor, set_cost_tracker


class CostTracker:
    """Accumulates op counts reported by the tensor primitives."""

    def __init__(self):
        self.macs = 0
        self.elems = 0

    def add_macs(self, n: int) -> None:
        self.macs += int(n)

    def add_elems(self, n: int) -> None:
        self.elems += int(n)

    @property
    def total(self) -> int:
        return self.macs + self.elems


@dataclass(frozen=True)
class CostReport:
    """Per-section (backbone/neck/head) parameter and op totals."""

    params: Dict[str, int]
    flops: Dict[str, int]
    macs: Dict[str, int]
    input_size: Tuple[int, int]

    @property
    def params_total(self) -> int:
        return sum(self.params.values())

    @property
    def flops_total(self) -> int:
        return sum(self.flops.values())

    @property
    def macs_total(self) -> int:
        return sum(self.macs.values())


SECTIONS = ("backbone", "neck", "head")


def count_params(model) -> int:
    """Stored scalar count: conv weights+biases and BN gamma/beta.

    BN running statistics are buffers and excluded. A fused model (or a
    fused block inside one) counts its folded form.
    """
    return model.param_count()


def _run_sections(model, x: Tensor):
    trackers = {}
    feed = x
    for name in SECTIONS:
        t = CostTracker()
        prev = set_cost_tracker(t)
        try:
            feed = getattr(model, name)(feed)
        finally:
            set_cost_tracker(prev)
        trackers[name] = t
    return trackers


def count_flops(model, input_size: Tuple[int, int]) -> int:
    return cost_report(model, input_size).flops_total


def cost_report(model, input_size: Tuple[int, int]) -> CostReport:
    """Measure a bound model by running one forward at the given size."""
    h, w = input_size
    x = Tensor(np.zeros((1, 3, h, w), np.float32))
    trackers = _run_sections(model, x)
    return CostReport(
        params={n: getattr(model, n).param_count() for n in SECTIONS},
        flops={n: t.total for n, t in trackers.items()},
        macs={n: t.macs for n, t in trackers.items()},
        input_size=(h, w),
    )


def format_cost_table(report: CostReport) -> str:
    """Aligned text table of the report, one row per section plus totals."""
    rows = [("section", "params", "params (M)", "flops (G)", "macs (G)")]
    for name in SECTIONS:
        rows.append(
            (
                name,
                f"{report.params[name]:,}",
                f"{report.params[name] / 1e6:.3f}",
                f"{report.flops[name] / 1e9:.3f}",
                f"{report.macs[name] / 1e9:.3f}",
            )
        )
    rows.append(
        (
            "total",
            f"{report.params_total:,}",
            f"{report.params_total / 1e6:.3f}",
            f"{report.flops_total / 1e9:.3f}",
            f"{report.macs_total / 1e9:.3f}",
        )
    )
    widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
    lines = []
    for i, row in enumerate(rows):
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)


def cost_report_json(report: CostReport) -> dict:
    return {
        "input_size": list(report.input_size),
        "sections": {
            n: {
                "params": report.params[n],
                "flops": report.flops[n],
                "macs": report.macs[n],
            }
            for n in SECTIONS
        },
        "totals": {
            "params": report.params_total,
            "flops": report.flops_total,
            "macs": report.macs_total,
        },
    }
