"""Command-line surface: predict, bench, fuse, inspect, selftest.

Exit codes: 0 success, 2 I/O problem, 3 configuration problem, 4 selftest
failure. All commands are deterministic given the same inputs and
--threads 1.
"""

from __future__ import annotations

import argparse
import sys
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from .analysis import cost_report, cost_report_json, format_cost_table
from .config import ExportConfig, ModelConfig, apply_overrides, load_config
from .errors import ConfigError, InputError, LoadError
from .image_io import Image, annotate, read_ppm, write_ppm
from .model import build_model
from .predictor import benchmark_grid, build_pipeline, predict_many
from .report import (
    bench_json,
    bench_table,
    detections_json_line,
    render_bench_figure,
    render_cost_figure,
    write_bench_csv,
    write_cost_csv,
    write_json,
)
from .reparam import fuse_model
from .selftest import run_selftest
from .weights import init_random, load_weights, save_weights


def _add_common(p: argparse.ArgumentParser, with_weights: bool = True):
    p.add_argument("--config", help="config file of dotted `key = value` lines")
    p.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override a config key (repeatable)",
    )
    p.add_argument(
        "--threads", type=int, help="cap numeric library threads (1 = reproducible)"
    )
    p.add_argument(
        "--seed", type=int, default=0, help="seed for --random-weights"
    )
    if with_weights:
        p.add_argument("--weights", help="weight store file")
        p.add_argument(
            "--random-weights",
            action="store_true",
            help="use seeded random weights instead of a store",
        )


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="repdet",
        description="anchor-free detector inference, fusion, and benchmarking",
    )
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("predict", help="run detection on PPM images")
    _add_common(p)
    p.add_argument("--images", nargs="+", required=True, help="input P6 PPM files")
    p.add_argument(
        "--out",
        help="output directory: detections.jsonl plus annotated PPM copies "
        "(omit to print JSON lines to stdout)",
    )

    p = sub.add_parser("bench", help="time the 2x2x2 export-config grid")
    _add_common(p)
    p.add_argument("--images", nargs="*", default=[], help="input P6 PPM files")
    p.add_argument("--iters", type=int, default=20, help="timed iterations")
    p.add_argument("--warmup", type=int, default=3, help="untimed iterations")
    p.add_argument(
        "--out", help="output directory for bench.json, bench.csv, bench.png"
    )

    p = sub.add_parser("fuse", help="fold fusable blocks and save the result")
    _add_common(p)
    p.add_argument("--out", required=True, help="path for the fused weight store")

    p = sub.add_parser("inspect", help="print parameter/flop cost report")
    _add_common(p)
    p.add_argument(
        "--out", help="output directory for cost.json, cost.csv, cost.png"
    )

    p = sub.add_parser("selftest", help="run the embedded sanity suite")
    _add_common(p, with_weights=False)

    return ap


def _configs(args):
    if args.config:
        try:
            mc, ec = load_config(args.config)
        except OSError as e:
            raise InputError(f"cannot read config {args.config}: {e.strerror}")
    else:
        mc, ec = ModelConfig(), ExportConfig()
    return apply_overrides(mc, ec, args.set)


def _loaded_model(args, mc: ModelConfig, allow_default_random: bool = False):
    model = build_model(mc)
    if getattr(args, "random_weights", False):
        store = init_random(mc, args.seed)
    elif getattr(args, "weights", None):
        if not Path(args.weights).is_file():
            raise InputError(f"weights file not found: {args.weights}")
        store = load_weights(args.weights)
    elif allow_default_random:
        store = init_random(mc, args.seed)
    else:
        raise ConfigError("provide --weights FILE or --random-weights")
    model.load(store)
    return model


def _out_dir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_predict(args) -> int:
    mc, ec = _configs(args)
    model = _loaded_model(args, mc)
    pipe = build_pipeline(model, ec)
    images = [read_ppm(p) for p in args.images]
    results = predict_many(pipe, images)
    lines = [
        detections_json_line(path, dets)
        for path, (dets, _) in zip(args.images, results)
    ]
    text = "\n".join(lines) + "\n"
    if args.out:
        out = _out_dir(args.out)
        (out / "detections.jsonl").write_text(text)
        for path, img, (dets, _) in zip(args.images, images, results):
            name = f"{Path(path).stem}_annotated.ppm"
            write_ppm(annotate(img, dets), str(out / name))
        print(f"wrote {len(lines)} records to {out / 'detections.jsonl'}")
    else:
        sys.stdout.write(text)
    return 0


def _synthetic_images(mc: ModelConfig, seed: int):
    r = np.random.default_rng(np.uint64(seed))
    h, w = mc.input_size
    return [Image(r.integers(0, 256, (h, w, 3), dtype=np.uint8))]


def cmd_bench(args) -> int:
    mc, ec = _configs(args)
    model = _loaded_model(args, mc)
    if args.images:
        images = [read_ppm(p) for p in args.images]
    else:
        images = _synthetic_images(mc, args.seed)
    rows = benchmark_grid(model, ec, images, args.warmup, args.iters)
    print(bench_table(rows))
    if args.out:
        out = _out_dir(args.out)
        write_json(bench_json(rows), str(out / "bench.json"))
        write_bench_csv(rows, str(out / "bench.csv"))
        render_bench_figure(rows, str(out / "bench.png"))
        print(f"wrote bench.json, bench.csv, bench.png to {out}")
    return 0


def cmd_fuse(args) -> int:
    mc, _ = _configs(args)
    model = _loaded_model(args, mc)
    fusable = model.fusable_count()
    before = model.param_count()
    fused = fuse_model(model)
    save_weights(fused.state_store(), args.out)
    if fusable == 0:
        print("no fusable nodes")
    print(f"params before: {before:,}")
    print(f"params after:  {fused.param_count():,}")
    print(f"wrote {args.out}")
    return 0


def cmd_inspect(args) -> int:
    mc, ec = _configs(args)
    model = _loaded_model(args, mc, allow_default_random=True)
    if ec.fuse_reparam:
        model = fuse_model(model)
    rep = cost_report(model, mc.input_size)
    print(format_cost_table(rep))
    print(f"deploy-form params: {model.param_count_deploy():,}")
    if args.out:
        out = _out_dir(args.out)
        write_json(cost_report_json(rep), str(out / "cost.json"))
        write_cost_csv(rep, str(out / "cost.csv"))
        render_cost_figure(rep, str(out / "cost.png"))
        print(f"wrote cost.json, cost.csv, cost.png to {out}")
    return 0


def cmd_selftest(args) -> int:
    return 4 if run_selftest() else 0


_COMMANDS = {
    "predict": cmd_predict,
    "bench": cmd_bench,
    "fuse": cmd_fuse,
    "inspect": cmd_inspect,
    "selftest": cmd_selftest,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads is not None and args.threads < 1:
        print("--threads must be >= 1", file=sys.stderr)
        return 3
    if args.threads is not None:
        from threadpoolctl import threadpool_limits

        limiter = threadpool_limits(limits=args.threads)
    else:
        limiter = nullcontext()
    try:
        with limiter:
            return _COMMANDS[args.cmd](args)
    except (InputError, LoadError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
