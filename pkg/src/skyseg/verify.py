"""Property suites behind ``skyseg verify``."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import layers as L
from . import losses, metrics, oracles
from . import tensor as T
from .blocks import CRASPP, FDB, FRSR, LKBR, SL, DoS, UpS
from .data.tiling import stitch, tile
from .gradcheck import gradcheck, projection
from .network import build, micro_config
from .tensor import Tensor

LAYER_TOL = 1e-6
NET_TOL = 1e-5
LOSS_TOL = 1e-6
PERFECT_TOL = 1e-9
STITCH_TOL = 1e-7


@dataclass
class Check:
    name: str
    value: float
    tol: float
    ok: bool

    def line(self) -> str:
        return f"{'PASS' if self.ok else 'FAIL'}  {self.name}: {self.value:.3e} (tol {self.tol:g})"


@dataclass
class SuiteResult:
    suite: str
    checks: list[Check] = field(default_factory=list)
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return all(c.ok for c in self.checks)

    def add(self, name: str, value: float, tol: float, ok: bool | None = None) -> None:
        self.checks.append(Check(name, float(value), tol, value < tol if ok is None else ok))

    def render(self) -> str:
        worst = max((c.value for c in self.checks), default=0.0)
        lines = [c.line() for c in self.checks]
        lines.append(f"{self.suite}: {'PASS' if self.passed else 'FAIL'} "
                     f"({len(self.checks)} checks, max error {worst:.3e}, {self.seconds:.1f}s)")
        return "\n".join(lines)


def _t(rng, *dims, grad=True):
    return Tensor(rng.normal(size=dims), requires_grad=grad, dtype="f64")


def generic_point(module: L.Module, rng: np.random.Generator) -> None:
    """Move BN affine params and biases off their init values so that no
    ReLU input sits exactly on its kink (beta = 0 with a degenerate batch
    does that) and bias gradients are not identically zero."""
    for name, p in module.named_parameters():
        if name.endswith(("gamma", "beta", "bias")):
            sign = rng.choice([-1.0, 1.0], size=p.dims)
            shift = 1.0 if name.endswith("gamma") else 0.0
            p.data[...] = shift + sign * rng.uniform(0.2, 1.0, size=p.dims)


def _module_check(mod, x: Tensor, seed: int, max_coords=None):
    generic_point(mod, np.random.default_rng(seed))
    params = mod.parameters()
    fn = projection(lambda x_, *ps: mod(x_), seed)
    return gradcheck(fn, [x, *params], max_coords=max_coords, seed=seed).max_rel_err


def layer_cases(rng):
    x = _t(rng, 2, 3, 6, 7)
    w = _t(rng, 4, 3, 3, 3)
    b = _t(rng, 4)
    yield "conv2d 3x3", projection(lambda a, k, c: L.conv2d(a, k, c)), [x, w, b]
    yield "conv2d 3x3 dilation 2", projection(lambda a, k: L.conv2d(a, k, dilation=2), 1), [x, w]
    yield "conv2d 3x3 stride 2", projection(lambda a, k: L.conv2d(a, k, stride=2), 2), [x, w]
    yield "conv2d 1x7", projection(lambda a, k: L.conv2d(a, k), 3), [x, _t(rng, 2, 3, 1, 7)]
    dw = _t(rng, 3, 1, 3, 3)
    yield "depthwise conv dilation 2", projection(lambda a, k: L.depthwise_conv2d(a, k, dilation=2), 4), [x, dw]
    pw = _t(rng, 5, 3, 1, 1)
    yield "separable conv", projection(lambda a, k, p: L.separable_conv2d(a, k, p), 5), [x, dw, pw]
    xp = Tensor(rng.permutation(2 * 3 * 6 * 8).reshape(2, 3, 6, 8) / 10.0, requires_grad=True, dtype="f64")
    yield "maxpool2", projection(L.maxpool2, 6), [xp]
    yield "upsample nn x2", projection(L.upsample_nn2, 7), [x]
    g = Tensor(rng.uniform(0.5, 1.5, size=3), requires_grad=True, dtype="f64")
    yield "batchnorm", projection(lambda a, gg, bb: L.batchnorm(a, gg, bb), 8), [x, g, _t(rng, 3)]
    yield "softmax", projection(lambda a: T.softmax(a, axis=1), 9), [x]
    pos = Tensor(rng.uniform(0.5, 2.0, size=(4, 5)), requires_grad=True, dtype="f64")
    yield "log/exp/div chain", projection(lambda a, c: T.div(T.log(a), T.exp(c)), 10), [pos, _t(rng, 4, 5)]
    away = Tensor(rng.uniform(0.1, 1.0, size=(4, 5)) * rng.choice([-1, 1], size=(4, 5)),
                  requires_grad=True, dtype="f64")
    yield "relu", projection(T.relu, 11), [away]


def block_cases(rng):
    x = _t(rng, 2, 4, 8, 8)
    yield "SL", SL(4, 2, rng, "f64"), x
    yield "FDB", FDB(4, 3, 2, rng, "f64"), x
    yield "FDB no input concat", FDB(4, 2, 2, rng, "f64", concat_input=False), x
    yield "FRSR first", FRSR(4, 2, rng, "f64", first=True), x
    yield "FRSR", FRSR(4, 2, rng, "f64"), x
    yield "CRASPP", CRASPP(4, (1, 2, 3), 2, 4, rng, "f64"), x
    yield "LKBR", LKBR(4, rng, k=3, width=5, dtype="f64"), x
    yield "DoS", DoS(4, 4, rng, "f64"), x
    yield "UpS", UpS(4, 3, rng, "f64"), x


def micro_net_error(seed: int = 0, max_coords: int = 3):
    rng = np.random.default_rng(seed)
    net = build(micro_config(seed=seed))
    generic_point(net, rng)
    img = Tensor(rng.normal(size=(1, 3, 32, 32)), dtype="f64")
    proj: list[np.ndarray] = []

    def fn(*params):
        outs = list(net.forward(img).values())
        if not proj:
            # scaled so the objective stays O(1), as in gradcheck.projection
            proj.extend(np.random.default_rng([seed, i]).normal(size=o.dims) / np.sqrt(o.size)
                        for i, o in enumerate(outs))
        total = None
        for r, o in zip(proj, outs):
            term = T.sum_(T.mul(o, Tensor(r)))
            total = term if total is None else T.add(total, term)
        return total

    return gradcheck(fn, net.parameters(), max_coords=max_coords, seed=seed)


def suite_gradcheck(seed: int = 0, include_net: bool = True) -> SuiteResult:
    res = SuiteResult("gradcheck")
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    for name, fn, inputs in layer_cases(rng):
        res.add(f"layer {name}", gradcheck(fn, inputs).max_rel_err, LAYER_TOL)
    for i, (name, mod, x) in enumerate(block_cases(rng)):
        res.add(f"block {name}", _module_check(mod, x, seed + i, max_coords=40), LAYER_TOL)
    for name, fn in (("cross_entropy", losses.cross_entropy), ("soft_iou", losses.soft_iou_loss),
                     ("soft_dice", losses.soft_dice_loss)):
        logits = _t(rng, 3, 4, 5)
        y = losses.onehot(rng.integers(0, 4, size=(3, 5)), 4, dtype=np.float64)
        res.add(f"loss {name}", gradcheck(lambda z: fn(T.softmax(z, axis=1), y), [logits]).max_rel_err, LAYER_TOL)
    if include_net:
        r = micro_net_error(seed)
        res.add(f"micro network end to end (32x32, {r.checked} coords, max |grad| {r.max_abs_grad:.2g})",
                r.max_rel_err, NET_TOL)
    res.seconds = time.perf_counter() - t0
    return res


def random_instance(rng, max_c: int = 5, max_n: int = 64):
    c = int(rng.integers(2, max_c + 1))
    n = int(rng.integers(1, max_n + 1))
    logits = rng.normal(size=(n, c)) * 2
    probs = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
    y = np.eye(c)[rng.integers(0, c, size=n)]
    w = rng.uniform(0.5, 2.0, size=c)
    return probs, y, w


def suite_loss_oracle(seed: int = 0, count: int = 100) -> SuiteResult:
    res = SuiteResult("loss-oracle")
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst = {"cross_entropy": 0.0, "weighted cross_entropy": 0.0, "soft_iou": 0.0, "soft_dice": 0.0,
             "soft_dice squared sums": 0.0}
    for _ in range(count):
        probs, y, w = random_instance(rng)
        p = Tensor(probs, dtype="f64")
        pairs = {
            "cross_entropy": (losses.cross_entropy(p, y).item(), oracles.cross_entropy(probs, y)),
            "weighted cross_entropy": (losses.cross_entropy(p, y, w).item(), oracles.cross_entropy(probs, y, w)),
            "soft_iou": (losses.soft_iou_loss(p, y).item(), oracles.soft_iou(probs, y)),
            "soft_dice": (losses.soft_dice_loss(p, y).item(), oracles.soft_dice(probs, y)),
            "soft_dice squared sums": (losses.soft_dice_loss(p, y, True).item(), oracles.soft_dice(probs, y, True)),
        }
        for k, (got, want) in pairs.items():
            worst[k] = max(worst[k], abs(got - want))
    for k, v in worst.items():
        res.add(f"{k} vs scalar loop ({count} instances)", v, LOSS_TOL)
    y = np.eye(4)[rng.integers(0, 4, size=32)]
    perfect = Tensor(y, dtype="f64")
    for name, got, want in (("cross_entropy", losses.cross_entropy(perfect, y).item(), 0.0),
                            ("soft_iou", losses.soft_iou_loss(perfect, y).item(), -1.0),
                            ("soft_dice", losses.soft_dice_loss(perfect, y).item(), -1.0)):
        res.add(f"perfect prediction {name} == {want:g}", abs(got - want), PERFECT_TOL, abs(got - want) <= PERFECT_TOL)
    res.seconds = time.perf_counter() - t0
    return res


def suite_metric_oracle(seed: int = 0, count: int = 50) -> SuiteResult:
    res = SuiteResult("metric-oracle")
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    cm_err, met_err = 0, 0.0
    for _ in range(count):
        c = int(rng.integers(2, 8))
        gt = rng.integers(0, c, size=(int(rng.integers(1, 20)), int(rng.integers(1, 20))))
        pred = rng.integers(0, c, size=gt.shape)
        if rng.random() < 0.3:
            gt[rng.random(gt.shape) < 0.1] = metrics.IGNORE_LABEL
        cm = metrics.accumulate(metrics.ConfusionMatrix(c), gt, pred)
        ref = oracles.confusion(gt, pred, c)
        cm_err = max(cm_err, int(np.abs(cm.counts - ref).max()))
        want = oracles.metrics(ref)
        for k, v in metrics.summary(cm).items():
            if math.isnan(v) != math.isnan(want[k]):
                met_err = math.inf
            elif not math.isnan(v):
                met_err = max(met_err, abs(v - want[k]))
    res.add("confusion counts vs per-pixel count", cm_err, 1, cm_err == 0)
    res.add("five summary metrics vs brute force", met_err, 1e-12)
    hand = metrics.ConfusionMatrix(2, np.array([[0, 0], [0, 0]]))
    hand.counts[:] = [[3, 2], [1, 4]]  # class 0: TP 3, FN 2, FP 1
    iou = metrics.iou_per_class(hand)[0]
    res.add("hand case TP=3 FP=1 FN=2 -> IoU 0.5", abs(iou - 0.5), 1, iou == 0.5)
    res.seconds = time.perf_counter() - t0
    return res


def suite_tile_roundtrip(seed: int = 0) -> SuiteResult:
    res = SuiteResult("tile-roundtrip")
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    grid = tile((1024, 1024), 512, 0.5)
    res.add("1024x1024 S=512 overlap 0.5 -> 9 tiles", abs(len(grid) - 9), 1, len(grid) == 9)
    full = rng.random((4, 1024, 1024))
    err = float(np.abs(stitch(grid, grid.split(full)) - full).max())
    res.add("stitch(split(x)) == x at overlap 0.5", err, STITCH_TOL)
    g0 = tile((1024, 1024), 512, 0.0)
    exact = np.array_equal(stitch(g0, g0.split(full)), full)
    res.add("overlap 0 round trip bit-exact", 0.0 if exact else 1.0, 1, exact)
    g1 = tile((700, 512), 512, 0.1)
    res.add("700x512 S=512 overlap 0.1 -> origins (0, 188)", 0.0 if g1.rows == (0, 188) else 1.0, 1,
            g1.rows == (0, 188) and g1.cols == (0,))
    hits = np.zeros((700, 512), dtype=int)
    for r, c in g1.origins:
        hits[r:r + 512, c:c + 512] += 1
    res.add("every pixel covered", float((hits == 0).sum()), 1, bool((hits > 0).all()))
    res.seconds = time.perf_counter() - t0
    return res


SUITES = {
    "gradcheck": suite_gradcheck,
    "loss-oracle": suite_loss_oracle,
    "metric-oracle": suite_metric_oracle,
    "tile-roundtrip": suite_tile_roundtrip,
}
