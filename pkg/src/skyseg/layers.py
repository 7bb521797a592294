"""Differentiable layers on NCHW tensors.

Convolutions use "same" zero padding; when the total padding is odd the extra
zero goes on the bottom/right.  Kernels are applied tap by tap (one matmul per
kernel offset) which keeps memory flat for large tiles.
"""
from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from .tensor import ShapeError, Tensor, _record, create


class DegenerateBatchError(ValueError):
    """Batch norm asked to normalise a channel with a single element."""


def same_padding(size: int, k: int, stride: int = 1, dilation: int = 1) -> tuple[int, int, int]:
    """Return (out_size, pad_before, pad_after) for same padding."""
    out = -(-size // stride)
    extent = (k - 1) * dilation + 1
    total = max((out - 1) * stride + extent - size, 0)
    return out, total // 2, total - total // 2


def _tap(xp, i, j, dilation, stride, ho, wo):
    r0, c0 = i * dilation, j * dilation
    return xp[:, :, r0:r0 + (ho - 1) * stride + 1:stride, c0:c0 + (wo - 1) * stride + 1:stride]


def _fold(a: np.ndarray) -> np.ndarray:
    """[N, C, P] -> [C, N*P] so a batch contraction becomes one matmul."""
    n, c, p = a.shape
    return a.reshape(c, p) if n == 1 else a.transpose(1, 0, 2).reshape(c, n * p)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, dilation: int = 1) -> Tensor:
    """2-D cross-correlation, weight [out, in, kh, kw], same padding."""
    if x.ndim != 4 or weight.ndim != 4:
        raise ShapeError(f"conv2d expects rank-4 input and weight, got {x.dims}, {weight.dims}")
    n, c, h, w = x.dims
    o, ci, kh, kw = weight.dims
    if ci != c:
        raise ShapeError(f"conv2d: input has {c} channels, weight expects {ci}")
    if bias is not None and bias.dims != (o,):
        raise ShapeError(f"conv2d: bias dims {bias.dims} != ({o},)")
    if stride < 1 or dilation < 1:
        raise ValueError("stride and dilation must be positive")
    ho, pt, pb = same_padding(h, kh, stride, dilation)
    wo, pl, pr = same_padding(w, kw, stride, dilation)
    xd, wd = x.data, weight.data
    pointwise = kh == 1 and kw == 1 and stride == 1
    if pointwise:
        xp = xd
        out = np.matmul(np.ascontiguousarray(wd[:, :, 0, 0]), xd.reshape(n, c, h * w))
    else:
        # per-tap [out, in] matrices must be contiguous to stay on the BLAS path
        wt = np.ascontiguousarray(wd.transpose(2, 3, 0, 1))
        xp = np.pad(xd, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
        out = np.zeros((n, o, ho * wo), dtype=xd.dtype)
        for i in range(kh):
            for j in range(kw):
                xs = _tap(xp, i, j, dilation, stride, ho, wo).reshape(n, c, ho * wo)
                out += np.matmul(wt[i, j], xs)
    if bias is not None:
        out += bias.data[None, :, None]
    out = out.reshape(n, o, ho, wo)

    def backward(g):
        g2 = g.reshape(n, o, ho * wo)
        gx = gw = gb = None
        if bias is not None and bias.requires_grad:
            gb = g2.sum(axis=(0, 2))
        if pointwise:
            xs = xd.reshape(n, c, h * w)
            if weight.requires_grad:
                gw = (_fold(g2) @ _fold(xs).T)[:, :, None, None]
            if x.requires_grad:
                gx = np.matmul(wd.reshape(o, c).T, g2).reshape(n, c, h, w)
            return gx, gw, gb
        if weight.requires_grad:
            gw = np.empty_like(wd)
            gf = _fold(g2)
        if x.requires_grad:
            gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                if weight.requires_grad:
                    xs = _tap(xp, i, j, dilation, stride, ho, wo).reshape(n, c, ho * wo)
                    gw[:, :, i, j] = gf @ _fold(xs).T
                if x.requires_grad:
                    gs = np.matmul(wt[i, j].T, g2).reshape(n, c, ho, wo)
                    _tap(gxp, i, j, dilation, stride, ho, wo)[...] += gs
        if x.requires_grad:
            gx = gxp[:, :, pt:pt + h, pl:pl + w]
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _record(out, parents, backward, "conv2d")


def depthwise_conv2d(x: Tensor, weight: Tensor, dilation: int = 1) -> Tensor:
    """One k×k filter per channel, weight [C, 1, kh, kw], stride 1, same padding."""
    n, c, h, w = x.dims
    if weight.ndim != 4 or weight.dims[0] != c or weight.dims[1] != 1:
        raise ShapeError(f"depthwise_conv2d: weight {weight.dims} does not match {c} channels")
    _, _, kh, kw = weight.dims
    _, pt, pb = same_padding(h, kh, 1, dilation)
    _, pl, pr = same_padding(w, kw, 1, dilation)
    xp = np.pad(x.data, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    wd = weight.data
    out = np.zeros_like(x.data)
    for i in range(kh):
        for j in range(kw):
            out += _tap(xp, i, j, dilation, 1, h, w) * wd[None, :, 0, i, j, None, None]

    def backward(g):
        gx = gw = None
        if weight.requires_grad:
            gw = np.empty_like(wd)
            for i in range(kh):
                for j in range(kw):
                    gw[:, 0, i, j] = (g * _tap(xp, i, j, dilation, 1, h, w)).sum(axis=(0, 2, 3))
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    _tap(gxp, i, j, dilation, 1, h, w)[...] += g * wd[None, :, 0, i, j, None, None]
            gx = gxp[:, :, pt:pt + h, pl:pl + w]
        return gx, gw

    return _record(out, (x, weight), backward, "depthwise_conv2d")


def separable_conv2d(x: Tensor, depthwise: Tensor, pointwise: Tensor, bias: Tensor | None = None,
                     dilation: int = 1) -> Tensor:
    return conv2d(depthwise_conv2d(x, depthwise, dilation), pointwise, bias)


def maxpool2(x: Tensor) -> Tensor:
    """2×2 max pooling, stride 2.  Ties route the gradient to the first
    element of the window in row-major order."""
    n, c, h, w = x.dims
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2 needs even spatial dims, got {h}×{w}")
    win = x.data.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    idx = np.argmax(win, axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        gw = np.zeros_like(win)
        np.put_along_axis(gw, idx[..., None], g[..., None], axis=-1)
        return (gw.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w),)

    return _record(out, (x,), backward, "maxpool2")


def upsample_nn2(x: Tensor) -> Tensor:
    n, c, h, w = x.dims
    out = np.broadcast_to(x.data[:, :, :, None, :, None], (n, c, h, 2, w, 2)).reshape(n, c, 2 * h, 2 * w)

    def backward(g):
        return (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),)

    return _record(out, (x,), backward, "upsample_nn2")


def batchnorm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5, strict: bool = True) -> Tensor:
    """Normalise each channel with the statistics of the current batch.

    With ``strict`` a channel holding a single element raises; otherwise it
    normalises to exactly zero (the output is ``beta``).
    """
    n, c, h, w = x.dims
    if gamma.dims != (c,) or beta.dims != (c,):
        raise ShapeError(f"batchnorm: affine params must have dims ({c},)")
    m = n * h * w
    if strict and m < 2:
        raise DegenerateBatchError("batchnorm over a single element per channel")
    xd = x.data
    mu = xd.mean(axis=(0, 2, 3), keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=(0, 2, 3), keepdims=True)
    inv = 1.0 / np.sqrt(var + xd.dtype.type(eps))
    xhat = xc * inv
    g_ = gamma.data[None, :, None, None]
    out = xhat * g_ + beta.data[None, :, None, None]

    def backward(g):
        gx = gg = gb = None
        if gamma.requires_grad:
            gg = (g * xhat).sum(axis=(0, 2, 3))
        if beta.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        if x.requires_grad:
            dxhat = g * g_
            s1 = dxhat.mean(axis=(0, 2, 3), keepdims=True)
            s2 = (dxhat * xhat).mean(axis=(0, 2, 3), keepdims=True)
            gx = inv * (dxhat - s1 - xhat * s2)
        return gx, gg, gb

    return _record(out, (x, gamma, beta), backward, "batchnorm")


def he_uniform(shape, fan_in: int, seed=None, dtype="f32", rng: np.random.Generator | None = None) -> Tensor:
    """HeUniform initialisation: U[-b, b] with b = sqrt(6 / fan_in)."""
    if fan_in < 1:
        raise ValueError("fan_in must be >= 1")
    bound = math.sqrt(6.0 / fan_in)
    if rng is None:
        return create(shape, dtype, "uniform", seed=seed, low=-bound, high=bound, requires_grad=True)
    t = create(shape, dtype, 0.0, requires_grad=True)
    t.data[...] = rng.uniform(-bound, bound, size=t.dims)
    return t


# -- parameter containers ----------------------------------------------------

class Module:
    """Minimal parameter container: Tensors, Modules and lists of Modules
    assigned as attributes are discovered in assignment order."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            if name.startswith("_"):
                continue
            full = f"{prefix}{name}"
            if isinstance(value, Tensor):
                if value.requires_grad:
                    yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)) and value and isinstance(value[0], Module):
                for i, item in enumerate(value):
                    yield from item.named_parameters(f"{full}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]


def _rng_for(seed_or_rng) -> np.random.Generator:
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return np.random.default_rng(seed_or_rng)


class Conv2d(Module):
    def __init__(self, in_ch, out_ch, k=3, stride=1, dilation=1, rng=None, dtype="f32", kernel=None):
        kh, kw = kernel if kernel is not None else (k, k)
        rng = _rng_for(rng)
        self.weight = he_uniform((out_ch, in_ch, kh, kw), in_ch * kh * kw, rng=rng, dtype=dtype)
        self.bias = create((out_ch,), dtype, 0.0, requires_grad=True)
        self._stride = stride
        self._dilation = dilation

    @property
    def in_channels(self) -> int:
        return self.weight.dims[1]

    @property
    def out_channels(self) -> int:
        return self.weight.dims[0]

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, self._stride, self._dilation)


class SeparableConv2d(Module):
    """Depthwise k×k followed by a pointwise 1×1 projection; stride 1."""

    def __init__(self, in_ch, out_ch, k=3, dilation=1, rng=None, dtype="f32"):
        rng = _rng_for(rng)
        self.depthwise = he_uniform((in_ch, 1, k, k), k * k, rng=rng, dtype=dtype)
        self.pointwise = he_uniform((out_ch, in_ch, 1, 1), in_ch, rng=rng, dtype=dtype)
        self.bias = create((out_ch,), dtype, 0.0, requires_grad=True)
        self._dilation = dilation

    def __call__(self, x: Tensor) -> Tensor:
        return separable_conv2d(x, self.depthwise, self.pointwise, self.bias, self._dilation)


class BatchNorm(Module):
    def __init__(self, ch, eps=1e-5, dtype="f32", strict=False):
        self.gamma = create((ch,), dtype, 1.0, requires_grad=True)
        self.beta = create((ch,), dtype, 0.0, requires_grad=True)
        self._eps = eps
        self._strict = strict

    def __call__(self, x: Tensor) -> Tensor:
        return batchnorm(x, self.gamma, self.beta, self._eps, self._strict)


def conv_param_count(in_ch: int, out_ch: int, k: int = 3) -> int:
    return out_ch * in_ch * k * k + out_ch


def separable_param_count(in_ch: int, out_ch: int, k: int = 3) -> int:
    return in_ch * k * k + in_ch * out_ch + out_ch
