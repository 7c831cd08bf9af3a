"""Benchmark and cost-report emitters: aligned text, JSON, CSV, figures.

Numbers destined for more than one sink are rounded once (3 decimals, i.e.
microsecond precision for timings) so the table, JSON, and CSV views of the
same run agree exactly.
"""

from __future__ import annotations

import csv
import json
from typing import Dict, List

from .analysis import SECTIONS, CostReport
from .predictor import STAGE_NAMES

STAT_NAMES = ("mean", "median", "p95")
FLAG_COLUMNS = ("fuse_reparam", "fuse_preprocess", "nms_mode")


def _r3(v: float) -> float:
    return round(v, 3)


def bench_json(rows: List[dict]) -> dict:
    configs = []
    for row in rows:
        configs.append(
            {
                "fuse_reparam": row["fuse_reparam"],
                "fuse_preprocess": row["fuse_preprocess"],
                "nms_mode": row["nms_mode"],
                "stages_ms": {
                    stage: {s: _r3(v) for s, v in stats.items()}
                    for stage, stats in row["stages_ms"].items()
                },
            }
        )
    return {"configs": configs}


def _stage_cell(row: dict, stage: str, stat: str) -> str:
    return f"{_r3(row['stages_ms'][stage][stat]):.3f}"


def bench_table(rows: List[dict], stat: str = "median") -> str:
    """One row per export config, one timing column per stage."""
    header = [*FLAG_COLUMNS, *(f"{s}({stat})" for s in STAGE_NAMES)]
    body = []
    for row in rows:
        body.append(
            [
                str(row["fuse_reparam"]).lower(),
                str(row["fuse_preprocess"]).lower(),
                row["nms_mode"],
                *(_stage_cell(row, s, stat) for s in STAGE_NAMES),
            ]
        )
    table = [header] + body
    widths = [max(len(r[i]) for r in table) for i in range(len(header))]
    lines = []
    for i, r in enumerate(table):
        lines.append("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip())
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)


def write_bench_csv(rows: List[dict], path: str) -> None:
    """Delimited dump: every stage/stat pair gets its own column."""
    cols = [*FLAG_COLUMNS] + [
        f"{stage}.{stat}" for stage in STAGE_NAMES for stat in STAT_NAMES
    ]
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(cols)
        for row in rows:
            w.writerow(
                [
                    str(row["fuse_reparam"]).lower(),
                    str(row["fuse_preprocess"]).lower(),
                    row["nms_mode"],
                ]
                + [
                    _r3(row["stages_ms"][stage][stat])
                    for stage in STAGE_NAMES
                    for stat in STAT_NAMES
                ]
            )


def write_json(payload: dict, path: str) -> None:
    with open(path, "w") as f:
        json.dump(payload, f, indent=2)
        f.write("\n")


def _config_label(row: dict) -> str:
    bits = []
    bits.append("fused" if row["fuse_reparam"] else "raw")
    bits.append("prejit" if row["fuse_preprocess"] else "plain")
    bits.append(row["nms_mode"])
    return "\n".join(bits)


def render_bench_figure(rows: List[dict], path: str, stat: str = "median") -> None:
    """Stacked per-stage bars, one bar per export config."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    labels = [_config_label(r) for r in rows]
    stages = [s for s in STAGE_NAMES if s != "end2end_ms"]
    xs = range(len(rows))
    fig, ax = plt.subplots(figsize=(max(6.0, 1.1 * len(rows)), 4.0))
    bottom = [0.0] * len(rows)
    for stage in stages:
        vals = [_r3(r["stages_ms"][stage][stat]) for r in rows]
        ax.bar(xs, vals, bottom=bottom, label=stage.replace("_ms", ""))
        bottom = [b + v for b, v in zip(bottom, vals)]
    ax.set_xticks(list(xs))
    ax.set_xticklabels(labels, fontsize=7)
    ax.set_ylabel(f"{stat} ms")
    ax.set_title("end-to-end stage timings per export config")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def cost_csv_rows(report: CostReport) -> List[List]:
    rows = [["section", "params", "flops", "macs"]]
    for name in SECTIONS:
        rows.append(
            [name, report.params[name], report.flops[name], report.macs[name]]
        )
    rows.append(
        ["total", report.params_total, report.flops_total, report.macs_total]
    )
    return rows


def write_cost_csv(report: CostReport, path: str) -> None:
    with open(path, "w", newline="") as f:
        csv.writer(f).writerows(cost_csv_rows(report))


def render_cost_figure(report: CostReport, path: str) -> None:
    """Side-by-side parameter and op-count bars per model section."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(8.0, 3.5))
    names = list(SECTIONS)
    ax1.bar(names, [report.params[n] / 1e6 for n in names], color="#2a9d8f")
    ax1.set_ylabel("params (M)")
    ax2.bar(names, [report.flops[n] / 1e9 for n in names], color="#e76f51")
    ax2.set_ylabel("flops (G)")
    h, w = report.input_size
    fig.suptitle(f"model cost by section at {h}x{w}")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def detections_json_line(image_path: str, dets) -> str:
    """One JSON-lines record for a predicted image."""
    payload = {
        "image": image_path,
        "detections": [
            {
                "class": d.class_id,
                "score": d.score,
                "box": [d.box[0], d.box[1], d.box[2], d.box[3]],
            }
            for d in dets
        ],
    }
    return json.dumps(payload)
