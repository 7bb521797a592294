"""Deterministic training loop over tiled samples."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .config import RunConfig
from .data.classes import DENSE_TO_CATEGORY, merge_classes
from .data.dataset import DatasetError, load_dataset
from .data.synthetic import LabeledImage
from .data.tiling import tile
from .data.transforms import branch_targets
from .losses import LossConfig, WeightSchedule, onehot, total_loss
from .network import Adam, SkyScapesNet, atomic_write_bytes, build, save_weights
from .tensor import Tensor

TASK_CLASS_SET = {
    "dense20": ("dense20",),
    "edge-binary": ("dense20",),
    "edge-multi": ("dense20",),
    "lane13": ("lane13",),
    "category11": ("category11", "dense20"),
}


class DivergenceError(FloatingPointError):
    pass


def task_mask(task: str, sample: LabeledImage) -> np.ndarray:
    """The sample's mask expressed in the alphabet ``task`` trains on."""
    allowed = TASK_CLASS_SET[task]
    if sample.class_set not in allowed:
        raise DatasetError(f"task {task} needs class set {' or '.join(allowed)}, got {sample.class_set}")
    if task == "category11" and sample.class_set == "dense20":
        return merge_classes(sample.mask, DENSE_TO_CATEGORY)
    return sample.mask


def to_input(rgb: np.ndarray, dtype=np.float32) -> np.ndarray:
    """[H, W, 3] bytes -> [3, H, W] floats in [-1, 1]."""
    return (np.transpose(rgb, (2, 0, 1)).astype(dtype) / 127.5 - 1.0).astype(dtype)


def train_tile_size(cfg: RunConfig, h: int, w: int) -> tuple[int, int]:
    th, tw = min(cfg.tile_size, h - h % 32), min(cfg.tile_size, w - w % 32)
    need = cfg.network().min_input
    if th < need or tw < need:
        raise DatasetError(f"sample {h}×{w} is smaller than the {need} px minimum for craspp_rates "
                           f"{cfg.craspp_rates}")
    return th, tw


@dataclass
class TrainingSet:
    inputs: list[np.ndarray]  # [3, S, S] per tile
    labels: list[dict[str, np.ndarray]]  # branch -> [S, S] labels per tile
    class_counts: dict[str, np.ndarray]


def prepare(cfg: RunConfig, samples: list[LabeledImage], branch_specs) -> TrainingSet:
    inputs, labels = [], []
    counts = {name: np.zeros(c, dtype=np.int64) for name, c in branch_specs}
    for s in samples:
        mask = task_mask(cfg.task, s)
        targets = branch_targets(cfg.task, mask, cfg.edge_radius)
        for name, c in branch_specs:
            if targets[name].max() >= c:
                raise DatasetError(f"branch {name}: label {targets[name].max()} >= {c} classes")
        h, w = mask.shape
        grid = tile((h, w), train_tile_size(cfg, h, w), cfg.train_overlap)
        x = to_input(s.rgb)
        for img_t, *lab_t in zip(grid.split(x), *(grid.split(targets[n]) for n, _ in branch_specs)):
            inputs.append(np.ascontiguousarray(img_t))
            labels.append({n: np.ascontiguousarray(l) for (n, _), l in zip(branch_specs, lab_t)})
            for (n, c), l in zip(branch_specs, lab_t):
                counts[n] += np.bincount(l.ravel(), minlength=c)
    if not inputs:
        raise DatasetError("no training samples")
    return TrainingSet(inputs, labels, counts)


def loss_config(cfg: RunConfig, data: TrainingSet, branch_specs) -> LossConfig:
    weighted = ("semantic", "lane_multi")
    schedule, fixed = None, None
    target = next((n for n, _ in branch_specs if n in weighted), None)
    if target is not None and cfg.class_weighting != "none":
        sched = WeightSchedule.from_frequencies(data.class_counts[target], cfg.schedule_ramp_epochs)
        if cfg.class_weighting == "scheduled":
            schedule = sched
        else:
            fixed = sched.target_weights
    return LossConfig(combo=cfg.loss, class_weights=fixed, branch_weights=cfg.branch_weight_map(),
                      schedule=schedule, weighted_branches=weighted, dice_squared_sums=cfg.dice_squared_sums)


@dataclass
class TrainResult:
    net: SkyScapesNet
    rows: list[dict] = field(default_factory=list)
    steps: int = 0
    checkpoints: list[Path] = field(default_factory=list)


def log_columns(branch_specs, components) -> list[str]:
    return ["epoch", "step", "loss"] + [f"{n}/{c}" for n, _ in branch_specs for c in components] + ["train_pa"]


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, float) else str(v)


def render_log(rows: list[dict], columns: list[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c, "")) if c in r else "" for c in columns])
    return buf.getvalue()


def train(cfg: RunConfig, samples: list[LabeledImage] | None = None, out_dir=None, progress=None) -> TrainResult:
    """Train from ``cfg``; writes weights, checkpoints and ``train_log.csv`` to ``out_dir``.

    Raises DivergenceError on a non-finite loss.
    """
    out = Path(out_dir if out_dir is not None else cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if samples is None:
        samples = load_dataset(cfg.data_dir)
    net_cfg = cfg.network()
    net = build(net_cfg)
    specs = net_cfg.branch_specs
    data = prepare(cfg, samples, specs)
    lcfg = loss_config(cfg, data, specs)
    named = net.state_dict()
    params = list(named.values())
    adam = Adam(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.adam_eps)
    rng = np.random.default_rng([cfg.seed, 2])
    columns = log_columns(specs, lcfg.components)
    first = specs[0][0]
    res = TrainResult(net)
    log_path = out / "train_log.csv"

    def flush_log():
        atomic_write_bytes(log_path, render_log(res.rows, columns).encode())

    done = False
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(data.inputs))
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xs, ys = [], {n: [] for n, _ in specs}
            for i in idx:
                x, lab = data.inputs[i], data.labels[i]
                mode = ("none", "h", "v")[int(rng.integers(3))] if cfg.flip_augment else "none"
                if mode != "none":
                    axis = 2 if mode == "h" else 1
                    x = np.flip(x, axis=axis)
                    lab = {n: np.flip(l, axis=axis - 1) for n, l in lab.items()}
                xs.append(x)
                for n in ys:
                    ys[n].append(lab[n])
            image = Tensor(np.ascontiguousarray(np.stack(xs)))
            labels = {n: np.stack(v) for n, v in ys.items()}
            outputs = net.forward(image)
            targets = {n: onehot(labels[n], c, dtype=np.float32) for n, c in specs}
            loss, parts = total_loss(lcfg, outputs, targets, epoch)
            value = loss.item()
            if not math.isfinite(value):
                flush_log()
                raise DivergenceError(f"non-finite loss {value} at epoch {epoch} step {res.steps}")
            for p in params:
                p.grad = None
            grads = T.backward(loss, wrt=params)
            adam.step(named, {n: grads[p] for n, p in named.items()})
            pred = outputs[first].data.argmax(axis=1)
            row = {"epoch": epoch, "step": res.steps, "loss": value,
                   "train_pa": float((pred == labels[first]).mean())}
            row.update(parts)
            res.rows.append(row)
            res.steps += 1
            if progress is not None:
                progress(row)
            if cfg.max_steps and res.steps >= cfg.max_steps:
                done = True
                break
        if (epoch + 1) % cfg.checkpoint_every == 0:
            ck = out / f"weights_e{epoch + 1:04d}.ssnw"
            save_weights(net, ck)
            res.checkpoints.append(ck)
        if done:
            break
    save_weights(net, out / "weights.ssnw")
    flush_log()
    return res
