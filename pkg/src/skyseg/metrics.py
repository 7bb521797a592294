"""Confusion matrix and the IoU family of segmentation metrics.

Rows of the confusion matrix are ground truth, columns are predictions.  A
class with neither ground-truth nor predicted pixels is *absent*: its IoU is
undefined (NaN) and it is left out of every class mean.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

IGNORE_LABEL = 255
HEADER = ("class", "tp", "fp", "fn", "iou", "precision", "recall")
SUMMARY = ("miou", "fwiou", "pixel_accuracy", "mean_precision", "mean_recall")


class LabelRangeError(ValueError):
    pass


@dataclass
class ConfusionMatrix:
    n_classes: int
    counts: np.ndarray | None = None

    def __post_init__(self):
        if self.counts is None:
            self.counts = np.zeros((self.n_classes, self.n_classes), dtype=np.int64)
        else:
            self.counts = np.asarray(self.counts, dtype=np.int64)
            if self.counts.shape != (self.n_classes, self.n_classes) or np.any(self.counts < 0):
                raise ValueError("counts must be a non-negative C×C matrix")

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.n_classes != self.n_classes:
            raise ValueError("class counts differ")
        return ConfusionMatrix(self.n_classes, self.counts + other.counts)

    __add__ = merge

    def tp(self) -> np.ndarray:
        return np.diag(self.counts)

    def fp(self) -> np.ndarray:
        return self.counts.sum(axis=0) - self.tp()

    def fn(self) -> np.ndarray:
        return self.counts.sum(axis=1) - self.tp()


def accumulate(cm: ConfusionMatrix, gt, pred, ignore_label: int | None = IGNORE_LABEL) -> ConfusionMatrix:
    """Add one pair of label maps to ``cm`` (in place) and return it."""
    gt, pred = np.asarray(gt), np.asarray(pred)
    if gt.shape != pred.shape:
        raise ValueError(f"label maps differ in dims: {gt.shape} vs {pred.shape}")
    gt = gt.ravel().astype(np.int64)
    pred = pred.ravel().astype(np.int64)
    if ignore_label is not None:
        keep = gt != ignore_label
        gt, pred = gt[keep], pred[keep]
    c = cm.n_classes
    for name, lab in (("ground truth", gt), ("prediction", pred)):
        if lab.size and (lab.min() < 0 or lab.max() >= c):
            raise LabelRangeError(f"{name} label outside [0, {c})")
    cm.counts += np.bincount(gt * c + pred, minlength=c * c).reshape(c, c)
    return cm


def _ratio(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    out = np.full(num.shape, np.nan)
    ok = den > 0
    out[ok] = num[ok] / den[ok]
    return out


def iou_per_class(cm: ConfusionMatrix) -> np.ndarray:
    tp = cm.tp()
    return _ratio(tp, cm.counts.sum(axis=0) + cm.counts.sum(axis=1) - tp)


def _nanmean(v: np.ndarray) -> float:
    v = v[~np.isnan(v)]
    return float(v.mean()) if v.size else math.nan


def mean_iou(cm: ConfusionMatrix) -> float:
    return _nanmean(iou_per_class(cm))


def fw_iou(cm: ConfusionMatrix) -> float:
    n = cm.total
    if n == 0:
        return math.nan
    freq = cm.counts.sum(axis=1) / n
    iou = np.nan_to_num(iou_per_class(cm))
    return float((freq * iou).sum())


def pixel_accuracy(cm: ConfusionMatrix) -> float:
    n = cm.total
    return float(np.trace(cm.counts) / n) if n else math.nan


def precision_per_class(cm: ConfusionMatrix) -> np.ndarray:
    return _ratio(cm.tp(), cm.counts.sum(axis=0))


def recall_per_class(cm: ConfusionMatrix) -> np.ndarray:
    return _ratio(cm.tp(), cm.counts.sum(axis=1))


def mean_precision(cm: ConfusionMatrix) -> float:
    return _nanmean(precision_per_class(cm))


def mean_recall(cm: ConfusionMatrix) -> float:
    return _nanmean(recall_per_class(cm))


def summary(cm: ConfusionMatrix) -> dict[str, float]:
    return {
        "miou": mean_iou(cm),
        "fwiou": fw_iou(cm),
        "pixel_accuracy": pixel_accuracy(cm),
        "mean_precision": mean_precision(cm),
        "mean_recall": mean_recall(cm),
    }


def _fmt(v: float) -> str:
    return "nan" if math.isnan(v) else repr(float(v))


def report(cm: ConfusionMatrix, class_names) -> str:
    """Per-class CSV followed by a ``metric,value`` summary block."""
    names = list(class_names)
    if len(names) != cm.n_classes:
        raise ValueError(f"{len(names)} names for {cm.n_classes} classes")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HEADER)
    iou, prec, rec = iou_per_class(cm), precision_per_class(cm), recall_per_class(cm)
    tp, fp, fn = cm.tp(), cm.fp(), cm.fn()
    for c, name in enumerate(names):
        w.writerow([name, int(tp[c]), int(fp[c]), int(fn[c]), _fmt(iou[c]), _fmt(prec[c]), _fmt(rec[c])])
    w.writerow(["metric", "value"])
    for key, val in summary(cm).items():
        w.writerow([key, _fmt(val)])
    return buf.getvalue()


def parse_report(text: str) -> tuple[list[dict], dict[str, float]]:
    """Inverse of :func:`report`: (per-class rows, summary)."""
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != HEADER:
        raise ValueError("missing report header")
    classes, summ = [], {}
    i = 1
    while i < len(rows) and rows[i] != ["metric", "value"]:
        name, tp, fp, fn, iou, prec, rec = rows[i]
        classes.append({"class": name, "tp": int(tp), "fp": int(fp), "fn": int(fn),
                        "iou": float(iou), "precision": float(prec), "recall": float(rec)})
        i += 1
    for key, val in rows[i + 1:]:
        summ[key] = float(val)
    return classes, summ
