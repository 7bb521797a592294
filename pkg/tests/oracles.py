"""Reference computations for the tests, written as explicit loops.

Nothing here imports the package, so each test compares two unrelated
implementations.
"""
import math

import numpy as np


def flat_pixels(probs, onehot):
    """[N, C, ...] arrays -> list of (p row, y row) python lists."""
    c = probs.shape[1]
    p = np.moveaxis(np.asarray(probs, dtype=np.float64), 1, -1).reshape(-1, c).tolist()
    y = np.moveaxis(np.asarray(onehot, dtype=np.float64), 1, -1).reshape(-1, c).tolist()
    return p, y


def ce_loop(probs, onehot, weights=None):
    p, y = flat_pixels(probs, onehot)
    c = len(p[0])
    acc = 0.0
    for n in range(len(p)):
        for k in range(c):
            if y[n][k] > 0:
                w = 1.0 if weights is None else weights[k]
                acc += w * y[n][k] * math.log(max(p[n][k], 1e-12))
    return -acc / c


def soft_iou_loop(probs, onehot):
    p, y = flat_pixels(probs, onehot)
    ratios = []
    for k in range(len(p[0])):
        num = sum(y[n][k] * p[n][k] for n in range(len(p)))
        den = sum(y[n][k] + p[n][k] - y[n][k] * p[n][k] for n in range(len(p)))
        if any(y[n][k] > 0 for n in range(len(p))):
            ratios.append(num / den)
    return -sum(ratios) / len(ratios)


def soft_dice_loop(probs, onehot):
    p, y = flat_pixels(probs, onehot)
    ratios = []
    for k in range(len(p[0])):
        num = 2 * abs(sum(y[n][k] * p[n][k] for n in range(len(p))))
        den = sum(y[n][k] ** 2 for n in range(len(p))) + sum(p[n][k] ** 2 for n in range(len(p)))
        if any(y[n][k] > 0 for n in range(len(p))):
            ratios.append(num / den)
    return -sum(ratios) / len(ratios)


def conv_loop(x, w, b=None, stride=1, dilation=1):
    """Cross-correlation with zero 'same' padding; extra zero bottom/right."""
    n, ci, h, wd = x.shape
    co, _, kh, kw = w.shape
    ho, wo = -(-h // stride), -(-wd // stride)
    ext_h, ext_w = (kh - 1) * dilation + 1, (kw - 1) * dilation + 1
    pad_h = max((ho - 1) * stride + ext_h - h, 0)
    pad_w = max((wo - 1) * stride + ext_w - wd, 0)
    top, left = pad_h // 2, pad_w // 2
    padded = np.zeros((n, ci, h + pad_h, wd + pad_w))
    padded[:, :, top:top + h, left:left + wd] = x
    out = np.zeros((n, co, ho, wo))
    for b_ in range(n):
        for o in range(co):
            for r in range(ho):
                for c in range(wo):
                    s = 0.0 if b is None else float(b[o])
                    for i in range(ci):
                        for u in range(kh):
                            for v in range(kw):
                                s += padded[b_, i, r * stride + u * dilation, c * stride + v * dilation] * w[o, i, u, v]
                    out[b_, o, r, c] = s
    return out


def maxpool_loop(x):
    n, c, h, w = x.shape
    out = np.zeros((n, c, h // 2, w // 2))
    for a in range(n):
        for k in range(c):
            for r in range(h // 2):
                for s in range(w // 2):
                    out[a, k, r, s] = max(x[a, k, 2 * r + i, 2 * s + j] for i in range(2) for j in range(2))
    return out


def count_pairs(gt, pred, n_classes, ignore=None):
    counts = {}
    for g, p in zip(np.ravel(gt).tolist(), np.ravel(pred).tolist()):
        if ignore is not None and g == ignore:
            continue
        counts[(g, p)] = counts.get((g, p), 0) + 1
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    for (g, p), k in counts.items():
        cm[g, p] = k
    return cm


def metric_loop(cm):
    """(miou, fwiou, pa, mean precision, mean recall) from TP/FP/FN lists."""
    cm = np.asarray(cm).tolist()
    c = len(cm)
    total = sum(map(sum, cm))
    tp = [cm[k][k] for k in range(c)]
    fp = [sum(cm[r][k] for r in range(c)) - tp[k] for k in range(c)]
    fn = [sum(cm[k]) - tp[k] for k in range(c)]
    iou = [tp[k] / (tp[k] + fp[k] + fn[k]) if tp[k] + fp[k] + fn[k] else None for k in range(c)]
    prec = [tp[k] / (tp[k] + fp[k]) if tp[k] + fp[k] else None for k in range(c)]
    rec = [tp[k] / (tp[k] + fn[k]) if tp[k] + fn[k] else None for k in range(c)]

    def avg(v):
        v = [a for a in v if a is not None]
        return sum(v) / len(v) if v else math.nan

    fw = sum((tp[k] + fn[k]) / total * iou[k] for k in range(c) if iou[k] is not None)
    return avg(iou), fw, sum(tp) / total, avg(prec), avg(rec)


def edge_loop(mask, radius):
    """Boundary pixels by 4-neighbour comparison, then Chebyshev dilation r-1."""
    h, w = mask.shape
    core = np.zeros((h, w), dtype=bool)
    for r in range(h):
        for c in range(w):
            for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                rr, cc = r + dr, c + dc
                if 0 <= rr < h and 0 <= cc < w and mask[rr, cc] != mask[r, c]:
                    core[r, c] = True
    out = np.zeros_like(core)
    d = radius - 1
    for r in range(h):
        for c in range(w):
            if core[max(r - d, 0):r + d + 1, max(c - d, 0):c + d + 1].any():
                out[r, c] = True
    return out
