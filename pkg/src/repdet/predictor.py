"""End-to-end prediction: letterbox preprocess, model forward, postprocess.

The pipeline mirrors deployment export switches: re-parameterization of the
model graph, a compiled preprocess stage that works directly on raw image
bytes, and a choice of NMS variant. None of the switches may change what is
detected, only how fast.
"""

from __future__ import annotations

import queue
import threading
from dataclasses import dataclass, field, replace
from time import perf_counter
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .config import ExportConfig
from .errors import ConfigError, InputError
from .image_io import Image
from .postprocess import Detection, LetterboxMeta, postprocess_outputs
from .reparam import fuse_model
from .tensor import Tensor

PAD_VALUE = 114


@dataclass(frozen=True)
class StageTiming:
    """Wall-clock milliseconds per stage for one prediction."""

    preprocess_ms: float
    inference_ms: float
    postprocess_ms: float
    end2end_ms: float

    def __post_init__(self):
        for name in ("preprocess_ms", "inference_ms", "postprocess_ms",
                     "end2end_ms"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")


def _letterbox_geometry(src_h: int, src_w: int, target: Tuple[int, int]):
    th, tw = target
    scale = min(th / src_h, tw / src_w)
    new_h = min(int(round(src_h * scale)), th)
    new_w = min(int(round(src_w * scale)), tw)
    return scale, new_h, new_w


def _sample_indices(src_h, src_w, scale, new_h, new_w):
    # nearest neighbor: destination i reads source min(floor(i/scale), n-1)
    ys = np.minimum((np.arange(new_h) / scale).astype(np.int64), src_h - 1)
    xs = np.minimum((np.arange(new_w) / scale).astype(np.int64), src_w - 1)
    return ys, xs


def preprocess_letterbox(
    image: Image, target: Tuple[int, int]
) -> Tuple[Tensor, LetterboxMeta]:
    """Aspect-preserving resize pasted top-left on a 114-valued canvas.

    Output is (1, 3, th, tw) float32 with raw RGB intensities in [0, 255].
    """
    src = image.pixels
    scale, new_h, new_w = _letterbox_geometry(image.h, image.w, target)
    ys, xs = _sample_indices(image.h, image.w, scale, new_h, new_w)
    floats = src.astype(np.float32)
    canvas = np.full((target[0], target[1], 3), float(PAD_VALUE), np.float32)
    canvas[:new_h, :new_w] = floats[ys][:, xs]
    x = Tensor(np.ascontiguousarray(canvas.transpose(2, 0, 1))[None])
    meta = LetterboxMeta(scale, (0.0, 0.0), (image.h, image.w))
    return x, meta


def _fused_letterbox(image: Image, target, cache: dict):
    """Same mapping, compiled: gathers raw bytes, one cast at the end."""
    key = (image.h, image.w)
    plan = cache.get(key)
    if plan is None:
        scale, new_h, new_w = _letterbox_geometry(image.h, image.w, target)
        ys, xs = _sample_indices(image.h, image.w, scale, new_h, new_w)
        plan = (scale, new_h, new_w, ys, xs)
        cache[key] = plan
    scale, new_h, new_w, ys, xs = plan
    canvas = np.full((target[0], target[1], 3), PAD_VALUE, np.uint8)
    canvas[:new_h, :new_w] = image.pixels[ys][:, xs]
    x = Tensor(
        np.ascontiguousarray(canvas.transpose(2, 0, 1)).astype(np.float32)[None]
    )
    return x, LetterboxMeta(scale, (0.0, 0.0), (image.h, image.w))


@dataclass(frozen=True)
class Pipeline:
    """Immutable bundle of a (possibly fused) model and its export switches."""

    model: object
    export: ExportConfig
    input_size: Tuple[int, int]
    _plan_cache: dict = field(default_factory=dict, repr=False)

    def preprocess(self, image: Image) -> Tuple[Tensor, LetterboxMeta]:
        if self.export.fuse_preprocess:
            return _fused_letterbox(image, self.input_size, self._plan_cache)
        return preprocess_letterbox(image, self.input_size)

    def postprocess(self, outs, meta: LetterboxMeta) -> List[Detection]:
        e = self.export
        return postprocess_outputs(
            outs,
            e.score_thresh,
            e.iou_thresh,
            e.max_detections,
            e.nms_mode,
            metas=[meta],
        )[0]


def build_pipeline(model, export: ExportConfig) -> Pipeline:
    """Assemble a pipeline; never mutates the given model."""
    work = fuse_model(model) if export.fuse_reparam else model
    return Pipeline(work, export, model.cfg.input_size)


def predict_end2end(
    pipe: Pipeline, image: Image
) -> Tuple[List[Detection], StageTiming]:
    """Run one image through all stages with per-stage wall timing."""
    t0 = perf_counter()
    x, meta = pipe.preprocess(image)
    t1 = perf_counter()
    outs = pipe.model(x)
    t2 = perf_counter()
    dets = pipe.postprocess(outs, meta)
    t3 = perf_counter()
    timing = StageTiming(
        (t1 - t0) * 1e3, (t2 - t1) * 1e3, (t3 - t2) * 1e3, (t3 - t0) * 1e3
    )
    return dets, timing


def _predict_overlapped(pipe: Pipeline, images: Sequence[Image]):
    """Stage-pipelined variant: one image in flight per stage."""
    q_pre: queue.Queue = queue.Queue(maxsize=1)
    q_inf: queue.Queue = queue.Queue(maxsize=1)
    results: list = [None] * len(images)

    def pre_worker():
        for i, im in enumerate(images):
            start = perf_counter()
            x, meta = pipe.preprocess(im)
            q_pre.put((i, x, meta, start, perf_counter() - start))
        q_pre.put(None)

    def inf_worker():
        while True:
            item = q_pre.get()
            if item is None:
                q_inf.put(None)
                return
            i, x, meta, start, pre_s = item
            t0 = perf_counter()
            outs = pipe.model(x)
            q_inf.put((i, outs, meta, start, pre_s, perf_counter() - t0))

    def post_worker():
        while True:
            item = q_inf.get()
            if item is None:
                return
            i, outs, meta, start, pre_s, inf_s = item
            t0 = perf_counter()
            dets = pipe.postprocess(outs, meta)
            t1 = perf_counter()
            results[i] = (
                dets,
                StageTiming(
                    pre_s * 1e3,
                    inf_s * 1e3,
                    (t1 - t0) * 1e3,
                    (t1 - start) * 1e3,
                ),
            )

    threads = [
        threading.Thread(target=f, daemon=True)
        for f in (pre_worker, inf_worker, post_worker)
    ]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    return results


def predict_many(
    pipe: Pipeline, images: Sequence[Image], overlap: bool = False
) -> List[Tuple[List[Detection], StageTiming]]:
    """Predict a batch of images, optionally pipelining the three stages."""
    if overlap:
        return _predict_overlapped(pipe, images)
    return [predict_end2end(pipe, im) for im in images]


STAGE_NAMES = ("preprocess_ms", "inference_ms", "postprocess_ms", "end2end_ms")


def _stage_stats(samples: List[StageTiming]) -> Dict[str, Dict[str, float]]:
    out = {}
    for name in STAGE_NAMES:
        vals = np.array([getattr(t, name) for t in samples])
        out[name] = {
            "mean": float(vals.mean()),
            "median": float(np.median(vals)),
            "p95": float(np.percentile(vals, 95)),
        }
    return out


def benchmark(
    pipe: Pipeline, images: Sequence[Image], warmup: int, iters: int
) -> Dict[str, Dict[str, float]]:
    """Repeated timed predictions; mean/median/p95 per stage over iters."""
    if iters < 1:
        raise ConfigError(f"iters must be >= 1, got {iters}")
    if not images:
        raise InputError("benchmark needs at least one image")
    for k in range(warmup):
        predict_end2end(pipe, images[k % len(images)])
    samples = [
        predict_end2end(pipe, images[k % len(images)])[1] for k in range(iters)
    ]
    return _stage_stats(samples)


GRID_ROWS = tuple(
    (fr, fp, nm)
    for fr in (False, True)
    for fp in (False, True)
    for nm in ("standard", "batched")
)


def benchmark_grid(
    model, export: ExportConfig, images: Sequence[Image], warmup: int, iters: int
) -> List[dict]:
    """Benchmark every fuse_reparam x fuse_preprocess x nms_mode combination."""
    rows = []
    for fr, fp, nm in GRID_ROWS:
        cfg = replace(
            export, fuse_reparam=fr, fuse_preprocess=fp, nms_mode=nm
        )
        pipe = build_pipeline(model, cfg)
        rows.append(
            {
                "fuse_reparam": fr,
                "fuse_preprocess": fp,
                "nms_mode": nm,
                "stages_ms": benchmark(pipe, images, warmup, iters),
            }
        )
    return rows
