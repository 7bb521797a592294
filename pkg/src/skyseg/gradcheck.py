"""Central finite-difference gradient checking."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .tensor import Tensor

STEP = 1e-5
ABS_FLOOR = 1e-9


def rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = ABS_FLOOR) -> np.ndarray:
    """Per-coordinate |a - n| / max(|a|, |n|); 0 wherever |a - n| <= floor."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    diff = np.abs(a - n)
    scale = np.maximum(np.abs(a), np.abs(n))
    out = np.zeros_like(diff)
    big = diff > floor
    out[big] = diff[big] / scale[big]
    return out


@dataclass
class GradcheckResult:
    max_rel_err: float
    per_input: list[float] = field(default_factory=list)
    checked: int = 0
    max_abs_grad: float = 0.0

    def passed(self, tol: float) -> bool:
        return self.max_rel_err < tol


def projection(fn: Callable[..., Tensor], seed: int = 0) -> Callable[..., Tensor]:
    """Turn a tensor-valued ``fn`` into a scalar one by a fixed random projection.

    The projection is scaled by 1/sqrt(size) so the objective stays O(1):
    finite-difference roundoff grows with |f| and would otherwise swamp the
    absolute floor on structurally zero gradients.
    """
    cache: dict = {}

    def scalar(*args):
        out = fn(*args)
        if out.ndim == 0:
            return out
        if "r" not in cache:
            cache["r"] = np.random.default_rng(seed).normal(size=out.dims) / np.sqrt(out.size)
        return T.sum_(T.mul(out, Tensor(cache["r"].astype(out.dtype))))

    return scalar


def gradcheck(fn: Callable[..., Tensor], inputs: Sequence[Tensor], h: float = STEP,
              max_coords: int | None = None, seed: int = 0) -> GradcheckResult:
    """Compare backward() against central differences of scalar ``fn(*inputs)``.

    ``inputs`` must be f64 tensors; the ones with ``requires_grad`` are
    checked.  ``max_coords`` caps the number of coordinates probed per input
    (sampled without replacement), which keeps large parameter tensors cheap.
    """
    for t in inputs:
        if t.dtype != np.float64:
            raise TypeError("gradcheck needs f64 inputs")
    out = fn(*inputs)
    if out.ndim != 0:
        raise T.ShapeError("gradcheck needs a scalar-valued function")
    wrt = [t for t in inputs if t.requires_grad]
    grads = T.backward(out, wrt=wrt)
    rng = np.random.default_rng(seed)
    res = GradcheckResult(0.0)
    with T.no_grad():
        for t in wrt:
            analytic = grads[t]
            flat = t.data.reshape(-1)
            idx = np.arange(flat.size)
            if max_coords is not None and flat.size > max_coords:
                idx = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
            numeric = np.empty(idx.size)
            for k, i in enumerate(idx):
                orig = flat[i]
                flat[i] = orig + h
                fp = fn(*inputs).item()
                flat[i] = orig - h
                fm = fn(*inputs).item()
                flat[i] = orig
                numeric[k] = (fp - fm) / (2 * h)
            err = float(rel_error(analytic.reshape(-1)[idx], numeric).max(initial=0.0))
            res.per_input.append(err)
            res.checked += idx.size
            res.max_abs_grad = max(res.max_abs_grad, float(np.abs(analytic.reshape(-1)[idx]).max(initial=0.0)))
            res.max_rel_err = max(res.max_rel_err, err)
    return res
