"""Tiled inference and dataset evaluation."""
from __future__ import annotations

from collections import OrderedDict
from pathlib import Path

import numpy as np

from . import tensor as T
from .data.classes import BINARY, CLASS_SETS, LANE13
from .data.synthetic import LabeledImage
from .data.tiling import stitch, tile
from .data.transforms import branch_targets
from .metrics import ConfusionMatrix, accumulate, report
from .network import SkyScapesNet, atomic_write_bytes
from .tensor import Tensor
from .train import task_mask, to_input


def _up32(n: int) -> int:
    return max(32, -(-n // 32) * 32)


def predict_probs(net: SkyScapesNet, rgb: np.ndarray, tile_size: int = 512, overlap: float = 0.1,
                  branches=None) -> "OrderedDict[str, np.ndarray]":
    """Per-branch ``[C, H, W]`` probabilities for an ``[H, W, 3]`` image.

    The image is edge-padded to a multiple of 32 and to at least one tile,
    cut into overlapping tiles, run tile by tile and stitched back by
    averaging; padding is cropped away at the end.
    """
    h, w = rgb.shape[:2]
    ph, pw = max(_up32(h), tile_size), max(_up32(w), tile_size)
    padded = np.pad(rgb, ((0, ph - h), (0, pw - w), (0, 0)), mode="edge")
    grid = tile((ph, pw), tile_size, overlap)
    x = to_input(padded, dtype=T.DTYPES[net.config.dtype])
    per_branch: dict[str, list[np.ndarray]] = OrderedDict()
    with T.no_grad():
        for piece in grid.split(x):
            out = net.forward(Tensor(np.ascontiguousarray(piece[None])), branches)
            for name, probs in out.items():
                per_branch.setdefault(name, []).append(probs.data[0])
    return OrderedDict((n, stitch(grid, tiles)[:, :h, :w]) for n, tiles in per_branch.items())


def predict_labels(net, rgb, tile_size=512, overlap=0.1, branches=None) -> "OrderedDict[str, np.ndarray]":
    probs = predict_probs(net, rgb, tile_size, overlap, branches)
    return OrderedDict((n, p.argmax(axis=0).astype(np.uint8)) for n, p in probs.items())


def branch_class_names(task: str, branch: str, n_classes: int) -> tuple[str, ...]:
    if branch.endswith("_binary"):
        names = BINARY
    elif branch == "lane_multi":
        names = LANE13
    elif task == "category11":
        names = CLASS_SETS["category11"]
    else:
        names = CLASS_SETS["dense20"]
    if len(names) != n_classes:
        names = tuple(f"class{i}" for i in range(n_classes))
    return tuple(names)


def evaluate(net: SkyScapesNet | None, samples: list[LabeledImage], task: str, branch_specs,
             tile_size: int = 512, overlap: float = 0.1, edge_radius: int = 2,
             oracle: bool = False) -> "OrderedDict[str, ConfusionMatrix]":
    """Confusion matrix per branch over ``samples``.

    With ``oracle`` the ground truth is scored against itself and no network
    is needed.
    """
    cms = OrderedDict((n, ConfusionMatrix(c)) for n, c in branch_specs)
    for s in samples:
        targets = branch_targets(task, task_mask(task, s), edge_radius)
        preds = targets if oracle else predict_labels(net, s.rgb, tile_size, overlap)
        for name, _ in branch_specs:
            accumulate(cms[name], targets[name], preds[name])
    return cms


def write_reports(cms, task: str, out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, cm in cms.items():
        p = out / f"metrics_{name}.csv"
        atomic_write_bytes(p, report(cm, branch_class_names(task, name, cm.n_classes)).encode())
        paths.append(p)
    return paths
