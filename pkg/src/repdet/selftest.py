"""Built-in sanity suite: quick oracle checks runnable from the CLI.

Each check is small, seeded, and self-contained so a deployed install can
verify its own numerics without the development test suite.
"""

from __future__ import annotations

import tempfile
from pathlib import Path
from typing import Callable, List, Tuple

import numpy as np

import repdet.tensor as T
from .config import ModelConfig
from .postprocess import Detection, batched_nms, iou, nms
from .predictor import preprocess_letterbox
from .image_io import Image
from .reparam import RepVggBlockParams, fold_bn, repvgg_fuse
from .tensor import BatchNormParams, ConvParams, Tensor
from .weights import WeightStore, load_weights, save_weights


def _rand(r, shape, lo=-0.5, hi=0.5):
    return r.uniform(lo, hi, shape).astype(np.float32)


def _bn(r, c):
    return BatchNormParams(
        _rand(r, c), _rand(r, c), _rand(r, c), r.uniform(0.5, 1.5, c).astype(np.float32)
    )


def check_conv_identity():
    r = np.random.default_rng(0)
    x = Tensor(_rand(r, (1, 3, 8, 8)))
    w = np.zeros((3, 3, 1, 1), np.float32)
    for i in range(3):
        w[i, i, 0, 0] = 1.0
    y = T.conv2d(x, ConvParams(w, np.zeros(3, np.float32), 1, 0, 1))
    assert np.allclose(y.data, x.data, atol=1e-6), "1x1 identity conv drifted"


def check_bn_fold():
    r = np.random.default_rng(1)
    conv = ConvParams(_rand(r, (8, 4, 3, 3)), _rand(r, 8), 1, 1, 1)
    bn = _bn(r, 8)
    folded = fold_bn(conv, bn)
    x = Tensor(_rand(r, (1, 4, 6, 6)))
    raw = T.batch_norm_infer(T.conv2d(x, conv), bn)
    fused = T.conv2d(x, folded)
    assert np.max(np.abs(raw.data - fused.data)) < 1e-5, "BN fold mismatch"


def check_repvgg_fuse():
    r = np.random.default_rng(2)
    c = 6
    blk = RepVggBlockParams(
        conv3=ConvParams(_rand(r, (c, c, 3, 3)), None, 1, 1, 1),
        bn3=_bn(r, c),
        conv1=ConvParams(_rand(r, (c, c, 1, 1)), None, 1, 0, 1),
        bn1=_bn(r, c),
        id_bn=_bn(r, c),
    )
    fused = repvgg_fuse(blk)
    x = Tensor(_rand(r, (1, c, 10, 10)))
    multi = T.add(
        T.add(
            T.batch_norm_infer(T.conv2d(x, blk.conv3), blk.bn3),
            T.batch_norm_infer(T.conv2d(x, blk.conv1), blk.bn1),
        ),
        T.batch_norm_infer(x, blk.id_bn),
    )
    single = T.conv2d(x, fused)
    assert np.max(np.abs(multi.data - single.data)) < 1e-5, "reparam mismatch"


def check_focus_and_shuffle():
    r = np.random.default_rng(3)
    x = Tensor(_rand(r, (1, 4, 8, 8)))
    f = T.focus_slice(x)
    assert f.shape == (1, 16, 4, 4), "focus shape"
    assert sorted(f.data.ravel()) == sorted(x.data.ravel()), "focus multiset"
    s = T.channel_shuffle(x, 2)
    assert sorted(s.data.ravel()) == sorted(x.data.ravel()), "shuffle multiset"
    assert np.array_equal(
        T.channel_shuffle(T.channel_shuffle(x, 2), 2).data, x.data
    ), "shuffle with 2 groups must be an involution on 4 channels"


def check_softmax_gates():
    r = np.random.default_rng(4)
    x = Tensor(_rand(r, (2, 3, 5, 5), -4, 4))
    g = T.softmax_channels(x)
    assert np.max(np.abs(g.data.sum(axis=1) - 1.0)) < 1e-6, "softmax sums"


def check_nms_pair():
    dets = [
        Detection(0, 0.9, (0, 0, 10, 10)),
        Detection(0, 0.8, (1, 1, 11, 11)),
        Detection(1, 0.7, (0, 0, 10, 10)),
        Detection(0, 0.6, (40, 40, 50, 50)),
    ]
    out = nms(dets, 0.5)
    assert out == [dets[0], dets[2], dets[3]], "greedy NMS picks"
    assert batched_nms(dets, 0.5) == out, "batched != standard"
    assert abs(iou((0, 0, 2, 2), (1, 1, 3, 3)) - 1 / 7) < 1e-12, "iou value"


def check_store_round_trip():
    r = np.random.default_rng(5)
    store = WeightStore(
        {"a.w": _rand(r, (2, 3, 3, 3)), "b.bias": _rand(r, (7,))}
    )
    with tempfile.TemporaryDirectory() as td:
        p = str(Path(td) / "w.rdw")
        save_weights(store, p)
        assert load_weights(p) == store, "store round trip"


def check_letterbox_pad():
    r = np.random.default_rng(6)
    img = Image(r.integers(0, 256, (48, 64, 3), dtype=np.uint8))
    x, meta = preprocess_letterbox(img, (64, 64))
    assert meta.scale == 1.0, "letterbox scale"
    assert np.all(x.data[0, :, 48:, :] == 114.0), "letterbox pad value"


def check_decode_zero():
    from .head import HeadOutputs
    from .postprocess import cxcywh_to_xyxy, decode_outputs

    zero = lambda c: Tensor(np.zeros((1, c, 1, 1), np.float32))  # noqa: E731
    outs = HeadOutputs((zero(1),), (zero(4),), (zero(1),), (8,))
    (boxes, obj, _), = decode_outputs(outs)
    assert np.allclose(cxcywh_to_xyxy(boxes)[0], [-4, -4, 4, 4]), "zero decode"
    assert abs(obj[0] - 0.5) < 1e-9, "zero objectness"


def check_model_fuse_equivalence():
    from dataclasses import replace

    from .model import build_model
    from .reparam import fuse_model
    from .weights import init_random

    cfg = replace(
        ModelConfig(), backbone_kind="repvgg", width_mult=0.25,
        depth_mult=0.33, input_size=(64, 64),
    )
    model = build_model(cfg)
    model.load(init_random(cfg, 0))
    r = np.random.default_rng(7)
    x = Tensor(r.uniform(0, 255, (1, 3, 64, 64)).astype(np.float32))
    a = model(x)
    b = fuse_model(model)(x)
    worst = max(
        float(np.max(np.abs(p.data - q.data)))
        for p, q in zip(a.cls_logits + a.reg, b.cls_logits + b.reg)
    )
    assert worst < 1e-4, f"full-model fusion drift {worst:.2e}"


CHECKS: List[Tuple[str, Callable[[], None]]] = [
    ("conv identity", check_conv_identity),
    ("bn folding", check_bn_fold),
    ("reparam fuse", check_repvgg_fuse),
    ("focus/shuffle bijections", check_focus_and_shuffle),
    ("softmax gates", check_softmax_gates),
    ("nms oracle", check_nms_pair),
    ("weight store round trip", check_store_round_trip),
    ("letterbox padding", check_letterbox_pad),
    ("decode zero case", check_decode_zero),
    ("full-model fuse equivalence", check_model_fuse_equivalence),
]


def run_selftest(report=print) -> int:
    """Run every check; returns the number of failures."""
    failures = 0
    for name, fn in CHECKS:
        try:
            fn()
        except Exception as e:  # report and keep going
            failures += 1
            report(f"FAIL  {name}: {e}")
        else:
            report(f"ok    {name}")
    report(
        f"{len(CHECKS) - failures}/{len(CHECKS)} checks passed"
        if failures
        else f"all {len(CHECKS)} checks passed"
    )
    return failures
