"""Slow reference implementations used by ``skyseg verify``.

Everything here is written as plain Python loops over pixels and classes so
it shares no code path with the vectorised versions it checks.
"""
from __future__ import annotations

import math

import numpy as np


def _pixels(probs: np.ndarray, y: np.ndarray):
    """Yield per-pixel (prob row, target row) pairs for [N, C, ...] arrays."""
    c = probs.shape[1]
    p = np.moveaxis(probs, 1, -1).reshape(-1, c)
    t = np.moveaxis(y, 1, -1).reshape(-1, c)
    for i in range(p.shape[0]):
        yield [float(v) for v in p[i]], [float(v) for v in t[i]]


def cross_entropy(probs, y, weights=None) -> float:
    c = probs.shape[1]
    w = [1.0] * c if weights is None else [float(v) for v in weights]
    total = 0.0
    for k in range(c):
        inner = 0.0
        for p, t in _pixels(probs, y):
            if t[k]:
                inner += t[k] * math.log(max(p[k], 1e-12))
        total += w[k] * inner
    return -total / c


def _per_class(probs, y):
    c = probs.shape[1]
    inter, sy, sp, sy2, sp2 = ([0.0] * c for _ in range(5))
    for p, t in _pixels(probs, y):
        for k in range(c):
            inter[k] += t[k] * p[k]
            sy[k] += t[k]
            sp[k] += p[k]
            sy2[k] += t[k] * t[k]
            sp2[k] += p[k] * p[k]
    return inter, sy, sp, sy2, sp2


def soft_iou(probs, y) -> float:
    inter, sy, sp, _, _ = _per_class(probs, y)
    terms = [inter[k] / (sy[k] + sp[k] - inter[k]) for k in range(len(sy)) if sy[k] > 0]
    return -sum(terms) / len(terms)


def soft_dice(probs, y, squared_sums: bool = False) -> float:
    inter, sy, sp, sy2, sp2 = _per_class(probs, y)
    terms = []
    for k in range(len(sy)):
        if sy[k] > 0:
            den = sy[k] ** 2 + sp[k] ** 2 if squared_sums else sy2[k] + sp2[k]
            terms.append(2 * abs(inter[k]) / den)
    return -sum(terms) / len(terms)


def confusion(gt, pred, n_classes: int, ignore=255) -> np.ndarray:
    cm = [[0] * n_classes for _ in range(n_classes)]
    for g, p in zip(np.asarray(gt).ravel().tolist(), np.asarray(pred).ravel().tolist()):
        if g == ignore:
            continue
        cm[g][p] += 1
    return np.array(cm, dtype=np.int64)


def metrics(cm) -> dict[str, float]:
    """All five summary metrics by explicit counting from a C×C list."""
    cm = np.asarray(cm).tolist()
    c = len(cm)
    n = sum(sum(r) for r in cm)
    ious, precs, recs = [], [], []
    fw = 0.0
    for k in range(c):
        tp = cm[k][k]
        gt_k = sum(cm[k])
        pr_k = sum(cm[r][k] for r in range(c))
        union = gt_k + pr_k - tp
        if union:
            ious.append(tp / union)
            fw += (gt_k / n) * (tp / union)
        if pr_k:
            precs.append(tp / pr_k)
        if gt_k:
            recs.append(tp / gt_k)
    diag = sum(cm[k][k] for k in range(c))

    def mean(v):
        return sum(v) / len(v) if v else math.nan

    return {"miou": mean(ious), "fwiou": fw if n else math.nan, "pixel_accuracy": diag / n if n else math.nan,
            "mean_precision": mean(precs), "mean_recall": mean(recs)}


def conv2d(x, w, dilation: int = 1) -> np.ndarray:
    """Direct 'same' convolution (cross-correlation), extra padding bottom/right."""
    n, ci, h, wd = x.shape
    co, _, kh, kw = w.shape
    eh, ew = dilation * (kh - 1), dilation * (kw - 1)
    top, left = eh // 2, ew // 2
    out = np.zeros((n, co, h, wd))
    for b in range(n):
        for o in range(co):
            for r in range(h):
                for c in range(wd):
                    acc = 0.0
                    for i in range(ci):
                        for u in range(kh):
                            for v in range(kw):
                                rr, cc = r - top + u * dilation, c - left + v * dilation
                                if 0 <= rr < h and 0 <= cc < wd:
                                    acc += x[b, i, rr, cc] * w[o, i, u, v]
                    out[b, o, r, c] = acc
    return out
