"""SkyScapesNet building blocks: SL, FDB, FRSR, CRASPP, LKBR, DoS and UpS."""
from __future__ import annotations

from typing import Sequence

from . import tensor as T
from .layers import BatchNorm, Conv2d, Module, SeparableConv2d, maxpool2, upsample_nn2
from .tensor import ShapeError, Tensor


class SL(Module):
    """Separable layer: BN -> ReLU -> 3×3 separable conv to ``growth`` channels."""

    def __init__(self, in_ch: int, growth: int, rng, dtype="f32"):
        self.bn = BatchNorm(in_ch, dtype=dtype)
        self.sep = SeparableConv2d(in_ch, growth, 3, rng=rng, dtype=dtype)
        self.in_channels = in_ch
        self.out_channels = growth

    def __call__(self, x: Tensor) -> Tensor:
        if x.dims[1] != self.in_channels:
            raise ShapeError(f"SL expects {self.in_channels} channels, got {x.dims[1]}")
        return self.sep(T.relu(self.bn(x)))


class FDB(Module):
    """Fully dense block.

    Layer ``i`` sees the concatenation of the block input and every earlier
    layer output.  With ``concat_input`` the block returns
    ``concat(input, new features)``; ``residual`` additionally adds the input
    onto those leading channels.  Without ``concat_input`` only the new
    features are returned (up-path convention) and ``residual`` has nothing to
    add onto.
    """

    def __init__(self, in_ch: int, n_layers: int, growth: int, rng, dtype="f32",
                 residual: bool = True, concat_input: bool = True):
        if n_layers < 1:
            raise ValueError("an FDB needs at least one SL")
        self.layers = [SL(in_ch + i * growth, growth, rng, dtype) for i in range(n_layers)]
        self.in_channels = in_ch
        self.growth = growth
        self._residual = residual
        self._concat_input = concat_input

    @property
    def new_channels(self) -> int:
        return len(self.layers) * self.growth

    @property
    def out_channels(self) -> int:
        return self.in_channels * self._concat_input + self.new_channels

    def __call__(self, x: Tensor) -> Tensor:
        if x.dims[1] != self.in_channels:
            raise ShapeError(f"FDB expects {self.in_channels} channels, got {x.dims[1]}")
        feats = [x]
        for layer in self.layers:
            feats.append(layer(T.concat(feats, axis=1)))
        if not self._concat_input:
            return T.concat(feats[1:], axis=1)
        head = x + x if self._residual else x
        return T.concat([head] + feats[1:], axis=1)


class FRSR(Module):
    """Full-resolution separable residual unit.

    The pooling stream pools the main stream once, runs
    conv3×3 (2F) -> separable conv (2F) -> conv1×1 (F) with BN/ReLU in front
    of each, upsamples by nearest neighbour and adds the result onto the last
    ``feat`` channels of the main stream (the paired FDB's new features).
    Every unit but the first also has a feed conv before pooling and a 1×1
    input conv after it with ``feat`` maps.
    """

    def __init__(self, in_ch: int, feat: int, rng, dtype="f32", first: bool = False,
                 feed_kernel: int | None = 3):
        if feat > in_ch:
            raise ValueError("FRSR feature maps cannot exceed the main-stream channels")
        self.in_channels = in_ch
        self.feat = feat
        self.feed = None if first or not feed_kernel else Conv2d(in_ch, in_ch, feed_kernel, rng=rng, dtype=dtype)
        self.entry = None if first else Conv2d(in_ch, feat, 1, rng=rng, dtype=dtype)
        first_in = in_ch if first else feat
        self.bn1 = BatchNorm(first_in, dtype=dtype)
        self.conv1 = Conv2d(first_in, 2 * feat, 3, rng=rng, dtype=dtype)
        self.bn2 = BatchNorm(2 * feat, dtype=dtype)
        self.sep = SeparableConv2d(2 * feat, 2 * feat, 3, rng=rng, dtype=dtype)
        self.bn3 = BatchNorm(2 * feat, dtype=dtype)
        self.last = Conv2d(2 * feat, feat, 1, rng=rng, dtype=dtype)

    def pooling_stream(self, x: Tensor) -> Tensor:
        s = x if self.feed is None else self.feed(x)
        s = maxpool2(s)
        if self.entry is not None:
            s = self.entry(s)
        s = self.conv1(T.relu(self.bn1(s)))
        s = self.sep(T.relu(self.bn2(s)))
        return self.last(T.relu(self.bn3(s)))

    def merge(self, x: Tensor, pooled: Tensor) -> Tensor:
        up = upsample_nn2(pooled)
        split = self.in_channels - self.feat
        if split == 0:
            return x + up
        return T.concat([x[:, :split], x[:, split:] + up], axis=1)

    def streams(self, x: Tensor) -> tuple[Tensor, Tensor]:
        """Return (full-resolution output, pooled stream)."""
        if x.dims[1] != self.in_channels:
            raise ShapeError(f"FRSR expects {self.in_channels} channels, got {x.dims[1]}")
        if x.dims[2] % 2 or x.dims[3] % 2:
            raise ShapeError(f"FRSR needs even spatial dims, got {x.dims[2:]}")
        pooled = self.pooling_stream(x)
        return self.merge(x, pooled), pooled

    def __call__(self, x: Tensor) -> Tensor:
        return self.streams(x)[0]


class CRASPP(Module):
    """Concatenated reversed ASPP: dilated 3×3 branches for ``rates`` and for
    ``reversed(rates)``, concatenated in that order and fused by a 1×1 conv."""

    def __init__(self, in_ch: int, rates: Sequence[int], width: int, out_ch: int, rng, dtype="f32"):
        rates = [int(r) for r in rates]
        if not rates or any(r < 1 for r in rates):
            raise ValueError(f"bad atrous rates {rates}")
        self.rates = rates + rates[::-1]
        self.branches = [Conv2d(in_ch, width, 3, dilation=r, rng=rng, dtype=dtype) for r in self.rates]
        self.fuse = Conv2d(len(self.rates) * width, out_ch, 1, rng=rng, dtype=dtype)
        self.in_channels = in_ch
        self.out_channels = out_ch

    def check_input(self, x: Tensor) -> None:
        need = craspp_min_input(self.rates)
        if min(x.dims[2:]) < need:
            raise ShapeError(f"input {x.dims[2:]} is smaller than the {need} px extent of atrous rate "
                             f"{max(self.rates)}")

    def branch_outputs(self, x: Tensor) -> list[Tensor]:
        self.check_input(x)
        return [b(x) for b in self.branches]

    def __call__(self, x: Tensor) -> Tensor:
        return self.fuse(T.concat(self.branch_outputs(x), axis=1))


class LKBR(Module):
    """Large kernel + boundary refinement.

    Two large-kernel paths, (k×1 then 1×k) and (1×k then k×1), are summed;
    a residual conv3×3-ReLU-conv3×3 unit then refines the sum.  All internal
    maps have ``width`` channels.  An optional 1×1 projection follows.
    """

    def __init__(self, in_ch: int, rng, k: int = 7, width: int = 21, out_ch: int | None = None, dtype="f32"):
        self.left_a = Conv2d(in_ch, width, kernel=(k, 1), rng=rng, dtype=dtype)
        self.left_b = Conv2d(width, width, kernel=(1, k), rng=rng, dtype=dtype)
        self.right_a = Conv2d(in_ch, width, kernel=(1, k), rng=rng, dtype=dtype)
        self.right_b = Conv2d(width, width, kernel=(k, 1), rng=rng, dtype=dtype)
        self.br1 = Conv2d(width, width, 3, rng=rng, dtype=dtype)
        self.br2 = Conv2d(width, width, 3, rng=rng, dtype=dtype)
        self.proj = None if out_ch is None else Conv2d(width, out_ch, 1, rng=rng, dtype=dtype)
        self.in_channels = in_ch
        self.out_channels = width if out_ch is None else out_ch

    def gcn(self, x: Tensor) -> Tensor:
        if x.dims[1] != self.in_channels:
            raise ShapeError(f"LKBR expects {self.in_channels} channels, got {x.dims[1]}")
        return self.left_b(self.left_a(x)) + self.right_b(self.right_a(x))

    def refine(self, y: Tensor) -> Tensor:
        return y + self.br2(T.relu(self.br1(y)))

    def __call__(self, x: Tensor) -> Tensor:
        y = self.refine(self.gcn(x))
        return y if self.proj is None else self.proj(y)


class DoS(Module):
    """Down-sampling transition: BN -> ReLU -> conv (1×1 by default) -> 2×2 max-pool."""

    def __init__(self, in_ch: int, out_ch: int, rng, dtype="f32", k: int = 1):
        self.bn = BatchNorm(in_ch, dtype=dtype)
        self.conv = Conv2d(in_ch, out_ch, k, rng=rng, dtype=dtype)
        self.out_channels = out_ch

    def __call__(self, x: Tensor) -> Tensor:
        return maxpool2(self.conv(T.relu(self.bn(x))))


class UpS(Module):
    """Up-sampling transition: nearest-neighbour ×2 then a 3×3 conv."""

    def __init__(self, in_ch: int, out_ch: int, rng, dtype="f32"):
        self.conv = Conv2d(in_ch, out_ch, 3, rng=rng, dtype=dtype)
        self.out_channels = out_ch

    def __call__(self, x: Tensor) -> Tensor:
        return self.conv(upsample_nn2(x))


def zero_(t: Tensor) -> Tensor:
    """Zero a parameter in place (used to expose additive-identity structure)."""
    t.data[...] = 0
    return t


def craspp_min_input(rates: Sequence[int]) -> int:
    """Smallest spatial side a CRASPP with ``rates`` accepts: the effective
    3×3 extent 2r + 1 of its largest dilated branch (an undilated branch is
    an ordinary padded conv and accepts any size)."""
    r = max(rates)
    return 2 * r + 1 if r > 1 else 1


def fdb_channels(in_ch: int, n_layers: int, growth: int) -> int:
    return in_ch + n_layers * growth
