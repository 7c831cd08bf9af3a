"""Deliberately naive reference implementations used as test oracles.

Everything in this file trades speed for obviousness: plain Python loops,
one formula per function, no shared code with the library under test. Unit
and acceptance tests compare the vectorized library against these.
"""

import math

import numpy as np


def conv2d_loops(x, weight, bias=None, stride=1, padding=0, groups=1):
    """Direct 7-loop convolution, float64 accumulator per output element.

    x: (n, c_in, h, w) array. weight: (c_out, c_in/groups, kh, kw).
    Returns float32 (n, c_out, h_out, w_out).
    """
    n, c_in, h, w = x.shape
    c_out, c_pg, kh, kw = weight.shape
    assert c_in % groups == 0 and c_out % groups == 0
    assert c_pg == c_in // groups
    sh = sw = stride
    h_out = (h + 2 * padding - kh) // sh + 1
    w_out = (w + 2 * padding - kw) // sw + 1
    out = np.zeros((n, c_out, h_out, w_out), dtype=np.float32)
    for b in range(n):
        for oc in range(c_out):
            g = oc // (c_out // groups)
            for oy in range(h_out):
                for ox in range(w_out):
                    acc = 0.0  # python float == 64-bit accumulator
                    for ic in range(c_pg):
                        src_c = g * c_pg + ic
                        for ky in range(kh):
                            iy = oy * sh + ky - padding
                            if iy < 0 or iy >= h:
                                continue
                            for kx in range(kw):
                                ix = ox * sw + kx - padding
                                if ix < 0 or ix >= w:
                                    continue
                                acc += float(x[b, src_c, iy, ix]) * float(
                                    weight[oc, ic, ky, kx]
                                )
                    if bias is not None:
                        acc += float(bias[oc])
                    out[b, oc, oy, ox] = np.float32(acc)
    return out


def batch_norm_scalar(x, gamma, beta, mean, var, eps=1e-5):
    """Element-by-element inference batch norm."""
    n, c, h, w = x.shape
    out = np.zeros_like(x, dtype=np.float32)
    for b in range(n):
        for j in range(c):
            s = float(gamma[j]) / math.sqrt(float(var[j]) + eps)
            for i in range(h):
                for k in range(w):
                    out[b, j, i, k] = np.float32(
                        (float(x[b, j, i, k]) - float(mean[j])) * s + float(beta[j])
                    )
    return out


def silu_scalar(v):
    return float(v) / (1.0 + math.exp(-float(v)))


def focus_index(x):
    """Space-to-depth by the documented index rule.

    out[n, 4q + r, i, j] = x[n, q, 2i + (r in {1,3}), 2j + (r in {2,3})]
    r: 0=(even row, even col) 1=(odd,even) 2=(even,odd) 3=(odd,odd).
    """
    n, c, h, w = x.shape
    out = np.zeros((n, 4 * c, h // 2, w // 2), dtype=x.dtype)
    for b in range(n):
        for q in range(c):
            for r in range(4):
                dy = 1 if r in (1, 3) else 0
                dx = 1 if r in (2, 3) else 0
                for i in range(h // 2):
                    for j in range(w // 2):
                        out[b, 4 * q + r, i, j] = x[b, q, 2 * i + dy, 2 * j + dx]
    return out


def shuffle_index(x, g):
    """out channel (j mod g)*(c/g) + j//g reads input channel j."""
    n, c, h, w = x.shape
    out = np.zeros_like(x)
    for j in range(c):
        out[:, (j % g) * (c // g) + j // g] = x[:, j]
    return out


def group_mean_loops(x, c_out):
    """Mean over consecutive channel groups of size c/c_out."""
    n, c, h, w = x.shape
    g = c // c_out
    out = np.zeros((n, c_out, h, w), dtype=np.float32)
    for j in range(c_out):
        for b in range(n):
            for i in range(h):
                for k in range(w):
                    acc = 0.0
                    for t in range(g):
                        acc += float(x[b, j * g + t, i, k])
                    out[b, j, i, k] = np.float32(acc / g)
    return out


def upsample_2x_index(x):
    n, c, h, w = x.shape
    out = np.zeros((n, c, 2 * h, 2 * w), dtype=x.dtype)
    for i in range(2 * h):
        for j in range(2 * w):
            out[:, :, i, j] = x[:, :, i // 2, j // 2]
    return out


def repvgg_branch_forward(x, blk, eps=1e-5):
    """Multi-branch RepVGG forward, each branch spelled out separately.

    blk is a dict: w3, bn3 (gamma, beta, mean, var), w1, bn1, id_bn or None,
    stride, groups. Activation applied at the end.
    """
    y3 = conv2d_loops(x, blk["w3"], None, blk["stride"], 1, blk["groups"])
    y3 = batch_norm_scalar(y3, *blk["bn3"], eps=eps)
    y1 = conv2d_loops(x, blk["w1"], None, blk["stride"], 0, blk["groups"])
    y1 = batch_norm_scalar(y1, *blk["bn1"], eps=eps)
    total = y3.astype(np.float64) + y1.astype(np.float64)
    if blk.get("id_bn") is not None:
        yid = batch_norm_scalar(x, *blk["id_bn"], eps=eps)
        total = total + yid.astype(np.float64)
    out = np.zeros_like(total, dtype=np.float32)
    flat = total.reshape(-1)
    oflat = out.reshape(-1)
    for i in range(flat.size):
        oflat[i] = np.float32(silu_scalar(flat[i]))
    return out


def iou_scalar(a, b):
    """Plain-coordinate IoU, zero-area boxes give 0 against themselves."""
    ix1, iy1 = max(a[0], b[0]), max(a[1], b[1])
    ix2, iy2 = min(a[2], b[2]), min(a[3], b[3])
    iw, ih = max(0.0, ix2 - ix1), max(0.0, iy2 - iy1)
    inter = iw * ih
    area_a = max(0.0, a[2] - a[0]) * max(0.0, a[3] - a[1])
    area_b = max(0.0, b[2] - b[0]) * max(0.0, b[3] - b[1])
    union = area_a + area_b - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def nms_greedy_loops(boxes, scores, classes, iou_thresh):
    """Greedy per-class suppression, kept indices in (score desc, index) order.

    Returns the list of surviving input indices sorted by (-score, index).
    """
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    kept = []
    for i in order:
        ok = True
        for j in kept:
            if classes[j] != classes[i]:
                continue
            if iou_scalar(boxes[i], boxes[j]) > iou_thresh:
                ok = False
                break
        if ok:
            kept.append(i)
    return kept


def decode_cell_loops(cls_map, reg_map, obj_map, stride):
    """Per-cell anchor-free decode over one pyramid level.

    Maps are (n, C|4|1, h, w) raw logits. Returns three lists per batch item:
    boxes cxcywh in input pixels, objectness, per-class scores (sigmoided).
    Cell order is row-major.
    """

    def sig(v):
        return 1.0 / (1.0 + math.exp(-float(v)))

    n, num_cls, h, w = cls_map.shape
    all_boxes, all_obj, all_cls = [], [], []
    for b in range(n):
        boxes, objs, clss = [], [], []
        for gy in range(h):
            for gx in range(w):
                tx, ty, tw, th = (float(reg_map[b, k, gy, gx]) for k in range(4))
                cx = (tx + gx) * stride
                cy = (ty + gy) * stride
                bw = math.exp(tw) * stride
                bh = math.exp(th) * stride
                boxes.append((cx, cy, bw, bh))
                objs.append(sig(obj_map[b, 0, gy, gx]))
                clss.append([sig(cls_map[b, k, gy, gx]) for k in range(num_cls)])
        all_boxes.append(boxes)
        all_obj.append(objs)
        all_cls.append(clss)
    return all_boxes, all_obj, all_cls
