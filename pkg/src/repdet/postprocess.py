"""Head-output decoding, score filtering, NMS, and coordinate mapping.

Boxes decode off a per-level cell grid: a cell (gy, gx) at stride s with
regression (tx, ty, tw, th) places a box center at ((tx + gx) * s,
(ty + gy) * s) with extent (exp(tw) * s, exp(th) * s). Objectness and
class logits go through a sigmoid; the working score of a candidate is
obj * max(cls), thresholded before NMS.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import List, Sequence, Tuple

import numpy as np

from .head import HeadOutputs


@dataclass(frozen=True)
class Detection:
    """One surviving box. Coordinates are xyxy pixels; score in [0, 1]."""

    class_id: int
    score: float
    box: Tuple[float, float, float, float]

    def __post_init__(self):
        x1, y1, x2, y2 = self.box
        if x2 < x1 or y2 < y1:
            raise ValueError(f"degenerate box {self.box}")
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")


@dataclass(frozen=True)
class LetterboxMeta:
    """How a network input was produced from an original image."""

    scale: float
    pad: Tuple[float, float]  # (left, top)
    original_size: Tuple[int, int]  # (h, w)

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError(f"scale must be positive, got {self.scale}")


def _sigmoid(a: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-a.astype(np.float64)))


def decode_outputs(
    outs: HeadOutputs, strides: Sequence[int] = None
) -> List[Tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """Per image: (boxes cxcywh (N, 4), obj (N,), cls_scores (N, C)).

    Cells flatten level-major then row-major, in network-input pixels.
    Strides default to the ones recorded on the outputs, normally (8,16,32).
    """
    if strides is None:
        strides = outs.strides
    n = outs.cls_logits[0].shape[0]
    boxes_l, obj_l, cls_l = [], [], []
    for lvl, s in enumerate(strides):
        reg = outs.reg[lvl].data.astype(np.float64)
        obj = _sigmoid(outs.obj_logits[lvl].data)
        cls = _sigmoid(outs.cls_logits[lvl].data)
        _, _, h, w = reg.shape
        gx, gy = np.meshgrid(np.arange(w), np.arange(h))  # row-major cells
        cx = (reg[:, 0] + gx) * s
        cy = (reg[:, 1] + gy) * s
        bw = np.exp(reg[:, 2]) * s
        bh = np.exp(reg[:, 3]) * s
        boxes_l.append(
            np.stack([cx, cy, bw, bh], axis=-1).reshape(n, h * w, 4)
        )
        obj_l.append(obj[:, 0].reshape(n, h * w))
        cls_l.append(cls.reshape(n, cls.shape[1], h * w).transpose(0, 2, 1))
    boxes = np.concatenate(boxes_l, axis=1)
    obj = np.concatenate(obj_l, axis=1)
    cls = np.concatenate(cls_l, axis=1)
    return [(boxes[i], obj[i], cls[i]) for i in range(n)]


def cxcywh_to_xyxy(boxes: np.ndarray) -> np.ndarray:
    half = boxes[..., 2:] / 2.0
    return np.concatenate([boxes[..., :2] - half, boxes[..., :2] + half], axis=-1)


def iou(a: Sequence[float], b: Sequence[float]) -> float:
    """Intersection over union of two xyxy boxes; 0 when the union is 0."""
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    union = area_a + area_b - inter
    return inter / union if union > 0 else 0.0


def _iou_one_to_many(box: np.ndarray, others: np.ndarray) -> np.ndarray:
    ix = np.maximum(
        0.0, np.minimum(box[2], others[:, 2]) - np.maximum(box[0], others[:, 0])
    )
    iy = np.maximum(
        0.0, np.minimum(box[3], others[:, 3]) - np.maximum(box[1], others[:, 1])
    )
    inter = ix * iy
    area = (box[2] - box[0]) * (box[3] - box[1])
    areas = (others[:, 2] - others[:, 0]) * (others[:, 3] - others[:, 1])
    union = area + areas - inter
    out = np.zeros(len(others))
    np.divide(inter, union, out=out, where=union > 0)
    return out


def _greedy_keep(boxes: np.ndarray, order: np.ndarray, thresh: float) -> list:
    """Greedy suppression over pre-sorted candidate indices."""
    kept: list = []
    for idx in order:
        if kept and np.any(_iou_one_to_many(boxes[idx], boxes[kept]) > thresh):
            continue
        kept.append(int(idx))
    return kept


def _sorted_indices(dets: Sequence[Detection]) -> np.ndarray:
    # descending score, ties by input index
    scores = np.array([d.score for d in dets])
    return np.lexsort((np.arange(len(dets)), -scores))


def nms(dets: Sequence[Detection], iou_thresh: float) -> List[Detection]:
    """Class-aware greedy suppression.

    Output is a subset of the input, ordered by descending score with ties
    broken by original index.
    """
    if not dets:
        return []
    boxes = np.array([d.box for d in dets], np.float64)
    classes = np.array([d.class_id for d in dets])
    order = _sorted_indices(dets)
    kept: list = []
    for c in np.unique(classes):
        sub = order[classes[order] == c]
        kept.extend(_greedy_keep(boxes, sub, iou_thresh))
    kept.sort(key=lambda i: (-dets[i].score, i))
    return [dets[i] for i in kept]


def batched_nms(dets: Sequence[Detection], iou_thresh: float) -> List[Detection]:
    """Single-pass variant: offset boxes per class, suppress class-agnostically.

    The offset exceeds any box extent, so cross-class overlaps vanish and
    the surviving set equals nms() exactly. Original coordinates are
    returned untouched.
    """
    if not dets:
        return []
    boxes = np.array([d.box for d in dets], np.float64)
    classes = np.array([d.class_id for d in dets], np.float64)
    span = float(np.abs(boxes).max()) + 1.0
    shifted = boxes + (classes * span)[:, None]
    kept = _greedy_keep(shifted, _sorted_indices(dets), iou_thresh)
    kept.sort(key=lambda i: (-dets[i].score, i))
    return [dets[i] for i in kept]


def scale_coords(
    dets: Sequence[Detection], meta: LetterboxMeta
) -> List[Detection]:
    """Map network-input boxes back to original-image pixels and clamp."""
    left, top = meta.pad
    oh, ow = meta.original_size
    out = []
    for d in dets:
        x1, y1, x2, y2 = d.box
        x1 = min(max((x1 - left) / meta.scale, 0.0), float(ow))
        x2 = min(max((x2 - left) / meta.scale, 0.0), float(ow))
        y1 = min(max((y1 - top) / meta.scale, 0.0), float(oh))
        y2 = min(max((y2 - top) / meta.scale, 0.0), float(oh))
        out.append(replace(d, box=(x1, y1, x2, y2)))
    return out


def select_candidates(
    boxes_cxcywh: np.ndarray,
    obj: np.ndarray,
    cls_scores: np.ndarray,
    score_thresh: float,
) -> List[Detection]:
    """Threshold obj * best-class score and build Detection candidates."""
    best = cls_scores.argmax(axis=1)
    score = obj * cls_scores[np.arange(len(obj)), best]
    keep = np.flatnonzero(score > score_thresh)
    xyxy = cxcywh_to_xyxy(boxes_cxcywh[keep])
    return [
        Detection(int(best[i]), float(score[i]), tuple(map(float, box)))
        for i, box in zip(keep, xyxy)
    ]


def postprocess_outputs(
    outs: HeadOutputs,
    score_thresh: float,
    iou_thresh: float,
    max_detections: int,
    nms_mode: str = "standard",
    metas: Sequence[LetterboxMeta] = None,
) -> List[List[Detection]]:
    """Full decode -> threshold -> NMS -> cap -> original-coordinate map."""
    suppress = batched_nms if nms_mode == "batched" else nms
    results = []
    for i, (boxes, obj, cls) in enumerate(decode_outputs(outs)):
        dets = select_candidates(boxes, obj, cls, score_thresh)
        dets = suppress(dets, iou_thresh)[:max_detections]
        if metas is not None:
            dets = scale_coords(dets, metas[i])
        results.append(dets)
    return results
