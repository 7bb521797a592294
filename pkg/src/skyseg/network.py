"""SkyScapesNet assembly, ADAM and the SSNW weight file format."""
from __future__ import annotations

import math
import os
import struct
from collections import OrderedDict
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import tensor as T
from .blocks import CRASPP, DoS, FDB, FRSR, LKBR, UpS, craspp_min_input
from .layers import Conv2d, Module
from .tensor import ShapeError, Tensor

FULL_PROFILE = (4, 5, 7, 10, 12, 15, 12, 10, 7, 5, 4)
REDUCED_PROFILE = (1, 2, 3, 4, 5, 6, 5, 4, 3, 2, 1)

TASK_BRANCHES = {
    "dense20": (("semantic", 20), ("edge_multi", 20), ("edge_binary", 2)),
    "lane13": (("lane_multi", 13), ("lane_binary", 2)),
    "category11": (("semantic", 11),),
    "edge-binary": (("edge_binary", 2),),
    "edge-multi": (("edge_multi", 20),),
}

N_POOL = 5
SHARED_DECODER_STAGES = 2


class ConfigError(ValueError):
    pass


class WeightFormatError(ValueError):
    pass


@dataclass(frozen=True)
class NetworkConfig:
    task: str = "dense20"
    sl_counts: tuple[int, ...] = FULL_PROFILE
    growth_rate: int = 16
    stem_channels: int = 48
    branch_specs: tuple[tuple[str, int], ...] | None = None
    craspp_rates: tuple[int, ...] = (1, 3, 5, 7)
    craspp_width: int = 64
    lkbr_k: int = 7
    lkbr_width: int = 21
    use_lkbr: bool = True
    fdb_residual: bool = True
    decoder_concat_input: bool = False
    frsr_feed_kernel: int = 3
    dos_kernel: int = 1
    head_init: str = "he"
    seed: int = 0
    dtype: str = "f32"

    def __post_init__(self):
        object.__setattr__(self, "sl_counts", tuple(int(n) for n in self.sl_counts))
        object.__setattr__(self, "craspp_rates", tuple(int(r) for r in self.craspp_rates))
        if self.branch_specs is None:
            if self.task not in TASK_BRANCHES:
                raise ConfigError(f"unknown task {self.task!r}")
            object.__setattr__(self, "branch_specs", TASK_BRANCHES[self.task])
        else:
            object.__setattr__(self, "branch_specs", tuple((str(n), int(c)) for n, c in self.branch_specs))
        self.validate()

    def validate(self) -> None:
        if len(self.sl_counts) != 2 * N_POOL + 1:
            raise ConfigError(f"sl_counts needs {2 * N_POOL + 1} entries, got {len(self.sl_counts)}")
        if any(n < 1 for n in self.sl_counts):
            raise ConfigError("every SL count must be >= 1")
        if self.growth_rate < 1 or self.stem_channels < 1:
            raise ConfigError("growth_rate and stem_channels must be positive")
        if not self.branch_specs:
            raise ConfigError("at least one branch is required")
        names = [n for n, _ in self.branch_specs]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate branch names {names}")
        if any(c < 2 for _, c in self.branch_specs):
            raise ConfigError("every branch needs at least two classes")
        if self.head_init not in ("he", "zero"):
            raise ConfigError("head_init must be 'he' or 'zero'")
        if self.dtype not in T.DTYPES:
            raise ConfigError(f"dtype must be one of {sorted(T.DTYPES)}")

    @property
    def min_input(self) -> int:
        """Smallest input side (a multiple of 32) whose bottleneck fits CRASPP."""
        return 2 ** N_POOL * craspp_min_input(self.craspp_rates)

    @property
    def branch_names(self) -> tuple[str, ...]:
        return tuple(n for n, _ in self.branch_specs)

    def with_(self, **kw) -> "NetworkConfig":
        return replace(self, **kw)


def micro_config(**kw) -> NetworkConfig:
    """Smallest sensible network; used for gradient checks."""
    base = dict(task="dense20", sl_counts=(1,) * 11, growth_rate=2, stem_channels=4,
                craspp_rates=(1,), craspp_width=2, lkbr_k=3, lkbr_width=3, dtype="f64")
    base.update(kw)
    return NetworkConfig(**base)


class _Stage(Module):
    pass


class SkyScapesNet(Module):
    """Encoder (5 × FDB/FRSR/DoS), bottleneck FDB + CRASPP, a decoder of
    5 × (UpS + FDB) whose first two stages are shared, and one copy of the
    remaining stages plus a 1×1 head per branch."""

    def __init__(self, config: NetworkConfig):
        self.config = config
        cfg = config
        g, sl, dt = cfg.growth_rate, cfg.sl_counts, cfg.dtype
        rng = np.random.default_rng([cfg.seed, 0])

        self.stem = Conv2d(3, cfg.stem_channels, 3, rng=rng, dtype=dt)
        ch = cfg.stem_channels
        self.encoder: list[_Stage] = []
        self.skip_channels: list[int] = []
        for i in range(N_POOL):
            st = _Stage()
            st.fdb = FDB(ch, sl[i], g, rng, dt, residual=cfg.fdb_residual)
            c_i = st.fdb.out_channels
            st.frsr = FRSR(c_i, sl[i] * g, rng, dt, first=(i == 0), feed_kernel=cfg.frsr_feed_kernel)
            st.dos = DoS(c_i, c_i, rng, dt, k=cfg.dos_kernel)
            self.encoder.append(st)
            self.skip_channels.append(c_i)
            ch = c_i + sl[i] * g
        self.bottleneck = FDB(ch, sl[N_POOL], g, rng, dt, residual=cfg.fdb_residual)
        self.craspp = CRASPP(self.bottleneck.out_channels, cfg.craspp_rates, cfg.craspp_width, ch, rng, dt)
        self.lkbr = [LKBR(c, rng, cfg.lkbr_k, cfg.lkbr_width, dtype=dt) for c in self.skip_channels] \
            if cfg.use_lkbr else []

        ch_in = ch
        shared, ch_in = self._decoder_stages(0, SHARED_DECODER_STAGES, ch_in, rng)
        self.decoder = shared
        self._branch_in = ch_in
        self.branches: list[_Stage] = []
        for b, (name, n_classes) in enumerate(cfg.branch_specs):
            brng = np.random.default_rng([cfg.seed, 1 + b])
            br = _Stage()
            br.stages, out_ch = self._decoder_stages(SHARED_DECODER_STAGES, N_POOL, ch_in, brng)
            br.head = Conv2d(out_ch, n_classes, 1, rng=brng, dtype=dt)
            if cfg.head_init == "zero":
                # uniform softmax at step 0
                br.head.weight.data[...] = 0
            self.branches.append(br)

    def _decoder_stages(self, start: int, stop: int, ch_in: int, rng) -> tuple[list[_Stage], int]:
        cfg = self.config
        g, sl = cfg.growth_rate, cfg.sl_counts
        stages = []
        for j in range(start, stop):
            level = N_POOL - 1 - j
            st = _Stage()
            st.ups = UpS(ch_in, sl[N_POOL + j] * g, rng, cfg.dtype)
            z_ch = st.ups.out_channels + self.skip_channels[level] + (cfg.lkbr_width if cfg.use_lkbr else 0)
            last = j == N_POOL - 1
            st.fdb = FDB(z_ch, sl[N_POOL + 1 + j], g, rng, cfg.dtype, residual=cfg.fdb_residual,
                         concat_input=last or cfg.decoder_concat_input)
            stages.append(st)
            ch_in = st.fdb.out_channels
        return stages, ch_in

    # -- forward -----------------------------------------------------------
    def _check_input(self, image: Tensor) -> None:
        if image.ndim != 4 or image.dims[1] != 3:
            raise ShapeError(f"expected image dims [N,3,H,W], got {image.dims}")
        h, w = image.dims[2:]
        if h % 32 or w % 32 or h == 0 or w == 0:
            raise ShapeError(f"spatial dims {h}×{w} must be positive multiples of 32")

    def encode(self, image: Tensor):
        """Run the shared trunk; returns (decoder features, skip tensors)."""
        self._check_input(image)
        x = self.stem(image)
        skips = []
        for st in self.encoder:
            f = st.fdb(x)
            r, pooled = st.frsr.streams(f)
            skips.append(r)
            x = T.concat([st.dos(r), pooled], axis=1)
        b = self.bottleneck(x)
        u = self.craspp(b) + x
        if self.lkbr:
            skips = [T.concat([s, lk(s)], axis=1) for s, lk in zip(skips, self.lkbr)]
        for j, st in enumerate(self.decoder):
            u = self._decode(st, u, skips[N_POOL - 1 - j])
        return u, skips

    @staticmethod
    def _decode(st: _Stage, u: Tensor, skip: Tensor) -> Tensor:
        return st.fdb(T.concat([st.ups(u), skip], axis=1))

    def forward(self, image: Tensor, branches: Iterable[str] | None = None) -> "OrderedDict[str, Tensor]":
        """Per-branch class probabilities [N, C, H, W] (softmax over axis 1)."""
        wanted = self.config.branch_names if branches is None else tuple(branches)
        unknown = set(wanted) - set(self.config.branch_names)
        if unknown:
            raise KeyError(f"unknown branches {sorted(unknown)}")
        u, skips = self.encode(image)
        out = OrderedDict()
        for (name, _), br in zip(self.config.branch_specs, self.branches):
            if name not in wanted:
                continue
            v = u
            for k, st in enumerate(br.stages):
                v = self._decode(st, v, skips[N_POOL - 1 - SHARED_DECODER_STAGES - k])
            out[name] = T.softmax(br.head(v), axis=1)
        return out

    __call__ = forward

    def branch_parameters(self, name: str) -> list[Tensor]:
        idx = self.config.branch_names.index(name)
        return self.branches[idx].parameters()

    def state_dict(self) -> "OrderedDict[str, Tensor]":
        return OrderedDict(self.named_parameters())


def build(config: NetworkConfig) -> SkyScapesNet:
    return SkyScapesNet(config)


def forward(net: SkyScapesNet, image: Tensor) -> "OrderedDict[str, Tensor]":
    return net.forward(image)


def parameter_count(net: Module) -> int:
    return sum(p.size for p in net.parameters())


def encoder_channels(config: NetworkConfig) -> list[int]:
    """FDB output channels of each encoder stage (in + n·g law)."""
    ch, out = config.stem_channels, []
    for i in range(N_POOL):
        c_i = ch + config.sl_counts[i] * config.growth_rate
        out.append(c_i)
        ch = c_i + config.sl_counts[i] * config.growth_rate
    return out


# -- optimisation -------------------------------------------------------------

@dataclass
class Adam:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def step(self, params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray]) -> None:
        missing = [n for n in params if n not in grads]
        if missing:
            raise KeyError(f"no gradient for parameters: {missing[:5]}{'...' if len(missing) > 5 else ''}")
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for name, p in params.items():
            g = np.asarray(grads[name], dtype=p.dtype)
            if name not in self.m:
                self.m[name] = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype, copy=False)


def adam_step(net: SkyScapesNet, state: Adam, gradients: Mapping[str, np.ndarray]) -> None:
    state.step(net.state_dict(), gradients)


# -- SSNW weight files ----------------------------------------------------------
# magic "SSNW", u16 version, u32 count, then per tensor:
# u16 name length, UTF-8 name, u8 rank, u32 dims[rank], little-endian f32 payload.

MAGIC = b"SSNW"
VERSION = 1


def encode_weights(tensors: Mapping[str, np.ndarray | Tensor]) -> bytes:
    parts = [MAGIC, struct.pack("<HI", VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = arr.data if isinstance(arr, Tensor) else np.asarray(arr)
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF or arr.ndim > 0xFF:
            raise WeightFormatError(f"cannot encode tensor {name!r}")
        parts.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def decode_weights(buf: bytes) -> "OrderedDict[str, np.ndarray]":
    mv = memoryview(buf)
    pos = 0

    def take(n: int) -> memoryview:
        nonlocal pos
        if pos + n > len(mv):
            raise WeightFormatError("truncated weight file")
        chunk = mv[pos:pos + n]
        pos += n
        return chunk

    if bytes(take(4)) != MAGIC:
        raise WeightFormatError("bad magic; not an SSNW file")
    version, count = struct.unpack("<HI", take(6))
    if version != VERSION:
        raise WeightFormatError(f"unsupported SSNW version {version}")
    out: OrderedDict[str, np.ndarray] = OrderedDict()
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        try:
            name = bytes(take(nlen)).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise WeightFormatError("tensor name is not UTF-8") from exc
        (rank,) = struct.unpack("<B", take(1))
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        n = math.prod(dims)
        arr = np.frombuffer(take(4 * n), dtype="<f4").astype(np.float32).reshape(dims)
        if name in out:
            raise WeightFormatError(f"duplicate tensor {name!r}")
        out[name] = arr
    if pos != len(mv):
        raise WeightFormatError("trailing bytes after last tensor")
    return out


def atomic_write_bytes(path, data: bytes) -> None:
    path = os.fspath(path)
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def save_weights(net: SkyScapesNet, path) -> None:
    atomic_write_bytes(path, encode_weights(net.state_dict()))


def read_weights(path) -> "OrderedDict[str, np.ndarray]":
    with open(path, "rb") as fh:
        return decode_weights(fh.read())


def load_weights(path, config: NetworkConfig) -> SkyScapesNet:
    """Build a network for ``config`` and fill it from an SSNW file."""
    tensors = read_weights(path)
    net = build(config)
    assign_weights(net, tensors)
    return net


def assign_weights(net: SkyScapesNet, tensors: Mapping[str, np.ndarray]) -> None:
    params = net.state_dict()
    if set(params) != set(tensors):
        missing = sorted(set(params) - set(tensors))[:3]
        extra = sorted(set(tensors) - set(params))[:3]
        raise WeightFormatError(f"weights do not match network (missing {missing}, unexpected {extra})")
    for name, p in params.items():
        arr = tensors[name]
        if arr.shape != p.dims:
            raise WeightFormatError(f"{name}: file dims {arr.shape} != network dims {p.dims}")
        p.data[...] = arr


def head_classes(tensors: Mapping[str, np.ndarray]) -> dict[int, int]:
    """Class count of each branch head found in a weight map."""
    out = {}
    for name, arr in tensors.items():
        parts = name.split(".")
        if len(parts) == 4 and parts[0] == "branches" and parts[2] == "head" and parts[3] == "weight":
            out[int(parts[1])] = arr.shape[0]
    return out


def profile(name: str | Sequence[int]) -> tuple[int, ...]:
    if isinstance(name, str):
        key = name.strip().lower()
        if key == "full":
            return FULL_PROFILE
        if key == "reduced":
            return REDUCED_PROFILE
        return tuple(int(v) for v in key.split(","))
    return tuple(int(v) for v in name)
