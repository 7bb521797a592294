"""Cross-entropy, Soft-IoU and Soft-Dice losses and their combinations.

Probabilities and one-hot targets carry the class on axis 1 (``[N, C, H, W]``
or ``[P, C]``); every other axis is summed over.  Cross-entropy is normalised
by the class count only, never by the pixel count.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor

logger = logging.getLogger(__name__)

PROB_FLOOR = 1e-12
COMBOS = ("ce", "soft_iou", "soft_dice", "ce+soft_iou", "ce+soft_dice")


def _class_sums(t: Tensor) -> Tensor:
    axes = tuple(i for i in range(t.ndim) if i != 1)
    return T.sum_(t, axes)


def _target(onehot, like: Tensor) -> np.ndarray:
    y = onehot.data if isinstance(onehot, Tensor) else np.asarray(onehot)
    if y.shape != like.dims:
        raise ShapeError(f"target dims {y.shape} != prediction dims {like.dims}")
    return y.astype(like.dtype, copy=False)


def onehot(labels: np.ndarray, n_classes: int, dtype=np.float32) -> np.ndarray:
    """[N, H, W] integer labels -> [N, C, H, W] one-hot."""
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError(f"labels outside [0, {n_classes})")
    eye = np.eye(n_classes, dtype=dtype)
    return np.moveaxis(eye[labels], -1, 1)


def cross_entropy(probs: Tensor, onehot, weights: Sequence[float] | np.ndarray | None = None) -> Tensor:
    """-(1/C) Σ_c w_c Σ_n y_nc log ŷ_nc."""
    y = _target(onehot, probs)
    n_classes = probs.dims[1]
    p = probs
    if np.any((y > 0) & (probs.data < PROB_FLOOR)):
        _warn_clamp()
    if np.any(probs.data < PROB_FLOOR):
        p = T.clip_min(probs, PROB_FLOOR)
    per_class = _class_sums(T.mul(Tensor(y), T.log(p)))
    if weights is not None:
        w = np.asarray(weights, dtype=probs.dtype)
        if w.shape != (n_classes,) or np.any(w <= 0):
            raise ValueError(f"class weights must be {n_classes} positive values")
        per_class = T.mul(per_class, Tensor(w))
    return T.scalar_mul(T.sum_(per_class), -1.0 / n_classes)


_clamp_warned = False


def _warn_clamp() -> None:
    # once per process at warning level; repeats go to debug
    global _clamp_warned
    level = logging.DEBUG if _clamp_warned else logging.WARNING
    logger.log(level, "probability below %g at a true-class pixel; clamped", PROB_FLOOR)
    _clamp_warned = True


def _present(y: np.ndarray) -> np.ndarray:
    axes = tuple(i for i in range(y.ndim) if i != 1)
    return y.sum(axis=axes) > 0


def _mean_over_present(ratio: Tensor, present: np.ndarray) -> Tensor:
    count = int(present.sum())
    if count == 0:
        raise ValueError("no class present in the target")
    mask = Tensor(present.astype(ratio.dtype))
    return T.scalar_mul(T.sum_(T.mul(ratio, mask)), -1.0 / count)


def soft_iou_loss(probs: Tensor, onehot) -> Tensor:
    """-(1/|present|) Σ_c Σ yŷ / Σ (y + ŷ - yŷ); classes absent from the target are dropped."""
    y = _target(onehot, probs)
    present = _present(y)
    yt = Tensor(y)
    inter = _class_sums(T.mul(yt, probs))
    union = T.sub(T.add(Tensor(y.sum(axis=tuple(i for i in range(y.ndim) if i != 1))), _class_sums(probs)), inter)
    # excluded classes get a dummy unit denominator so 0/0 never occurs
    union = T.add(union, Tensor((~present).astype(probs.dtype)))
    return _mean_over_present(T.div(inter, union), present)


def soft_dice_loss(probs: Tensor, onehot, squared_sums: bool = False) -> Tensor:
    """-(1/|present|) Σ_c 2 |Σ yŷ| / (Σ y² + Σ ŷ²).

    ``squared_sums`` switches the denominator to (Σ y)² + (Σ ŷ)².
    """
    y = _target(onehot, probs)
    present = _present(y)
    axes = tuple(i for i in range(y.ndim) if i != 1)
    inter = _class_sums(T.mul(Tensor(y), probs))
    if squared_sums:
        sy = y.sum(axis=axes)
        den = T.add(Tensor(sy * sy), T.square(_class_sums(probs)))
    else:
        den = T.add(Tensor((y * y).sum(axis=axes)), _class_sums(T.square(probs)))
    den = T.add(den, Tensor((~present).astype(probs.dtype)))
    # inter >= 0 for probabilities, so |.| is the identity here
    return _mean_over_present(T.div(T.scalar_mul(inter, 2.0), den), present)


# -- weighting schedule --------------------------------------------------------

@dataclass
class WeightSchedule:
    start_weights: np.ndarray
    target_weights: np.ndarray
    ramp_epochs: int = 20

    def __post_init__(self):
        self.start_weights = np.asarray(self.start_weights, dtype=np.float64)
        self.target_weights = np.asarray(self.target_weights, dtype=np.float64)
        if self.start_weights.shape != self.target_weights.shape:
            raise ValueError("start and target weights differ in length")
        if np.any(self.start_weights <= 0) or np.any(self.target_weights <= 0):
            raise ValueError("class weights must be positive")
        if self.ramp_epochs < 0:
            raise ValueError("ramp_epochs must be >= 0")

    @classmethod
    def from_frequencies(cls, pixel_counts, ramp_epochs: int = 20) -> "WeightSchedule":
        """Uniform start; target = inverse pixel frequency normalised to mean 1
        over the classes that occur.  Classes that never occur keep weight 1."""
        counts = np.asarray(pixel_counts, dtype=np.float64)
        target = np.ones_like(counts)
        seen = counts > 0
        if seen.any():
            inv = counts[seen].sum() / counts[seen]
            target[seen] = inv / inv.mean()
        return cls(np.ones_like(counts), target, ramp_epochs)


def scheduled_weights(schedule: WeightSchedule, epoch: float) -> np.ndarray:
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    frac = 1.0 if schedule.ramp_epochs == 0 else min(epoch / schedule.ramp_epochs, 1.0)
    return schedule.start_weights + frac * (schedule.target_weights - schedule.start_weights)


# -- combined objective --------------------------------------------------------

@dataclass
class LossConfig:
    combo: str = "ce+soft_iou"
    class_weights: np.ndarray | None = None
    branch_weights: Mapping[str, float] = field(default_factory=dict)
    schedule: WeightSchedule | None = None
    weighted_branches: tuple[str, ...] = ("semantic", "lane_multi")
    dice_squared_sums: bool = False

    def __post_init__(self):
        if self.combo not in COMBOS:
            raise ValueError(f"unknown loss combo {self.combo!r}; expected one of {COMBOS}")
        if any(w < 0 for w in self.branch_weights.values()):
            raise ValueError("branch weights must be non-negative")
        if self.class_weights is not None and np.any(np.asarray(self.class_weights) <= 0):
            raise ValueError("class weights must be positive")

    @property
    def components(self) -> tuple[str, ...]:
        return tuple(self.combo.split("+"))

    def branch_weight(self, name: str) -> float:
        return float(self.branch_weights.get(name, 1.0))


def component_loss(name: str, probs: Tensor, target, weights=None, dice_squared_sums=False) -> Tensor:
    if name == "ce":
        return cross_entropy(probs, target, weights)
    if name == "soft_iou":
        return soft_iou_loss(probs, target)
    if name == "soft_dice":
        return soft_dice_loss(probs, target, dice_squared_sums)
    raise ValueError(f"unknown loss component {name!r}")


def total_loss(config: LossConfig, outputs: Mapping[str, Tensor], targets: Mapping, epoch: float = 0):
    """Weighted sum over branches of the configured component losses.

    Returns ``(loss, parts)`` where ``parts`` maps ``"branch/component"`` to
    the float value of each term.  Branches with weight 0 are skipped.
    """
    if set(outputs) != set(targets):
        raise KeyError(f"branch mismatch: outputs {sorted(outputs)} vs targets {sorted(targets)}")
    class_w = config.class_weights
    if config.schedule is not None:
        class_w = scheduled_weights(config.schedule, epoch)
    total = None
    parts: dict[str, float] = {}
    for name, probs in outputs.items():
        bw = config.branch_weight(name)
        if bw == 0:
            continue
        weights = class_w if name in config.weighted_branches else None
        branch = None
        for comp in config.components:
            term = component_loss(comp, probs, targets[name], weights if comp == "ce" else None,
                                  config.dice_squared_sums)
            parts[f"{name}/{comp}"] = term.item()
            branch = term if branch is None else T.add(branch, term)
        if bw != 1.0:
            branch = T.scalar_mul(branch, bw)
        total = branch if total is None else T.add(total, branch)
    if total is None:
        raise ValueError("every branch has weight 0")
    return total, parts
