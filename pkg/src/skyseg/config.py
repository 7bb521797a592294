"""``key = value`` run configuration with typed defaults."""
from __future__ import annotations

import os
from dataclasses import dataclass, fields, replace

from .losses import COMBOS
from .network import TASK_BRANCHES, NetworkConfig, profile

SEED_ENV = "SKYSEG_SEED"
CLASS_WEIGHTING = ("none", "scheduled", "fixed")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    task: str = "dense20"
    sl_profile: tuple[int, ...] = profile("full")
    growth_rate: int = 16
    stem_channels: int = 48
    craspp_rates: tuple[int, ...] = (1, 3, 5, 7)
    lkbr_k: int = 7
    use_lkbr: bool = True
    head_init: str = "he"
    loss: str = "ce+soft_iou"
    dice_squared_sums: bool = False
    class_weighting: str = "scheduled"
    schedule_ramp_epochs: int = 20
    branch_weights: tuple[float, ...] = ()
    lr: float = 0.0001
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 60
    max_steps: int = 0
    batch_size: int = 1
    seed: int = 0
    tile_size: int = 512
    train_overlap: float = 0.5
    infer_overlap: float = 0.1
    flip_augment: bool = True
    edge_radius: int = 2
    checkpoint_every: int = 10
    data_dir: str = "data"
    out_dir: str = "run"
    weights: str = ""
    plots: bool = True

    def validate(self) -> "RunConfig":
        if self.task not in TASK_BRANCHES:
            raise ConfigError(f"task must be one of {sorted(TASK_BRANCHES)}")
        if self.loss not in COMBOS:
            raise ConfigError(f"loss must be one of {COMBOS}")
        if self.class_weighting not in CLASS_WEIGHTING:
            raise ConfigError(f"class_weighting must be one of {CLASS_WEIGHTING}")
        if self.lr <= 0 or self.batch_size < 1 or self.epochs < 0 or self.max_steps < 0:
            raise ConfigError("lr and batch_size must be positive; epochs and max_steps >= 0")
        if not 0 <= self.train_overlap < 1 or not 0 <= self.infer_overlap < 1:
            raise ConfigError("overlaps must lie in [0, 1)")
        if self.tile_size < 32 or self.tile_size % 32:
            raise ConfigError("tile_size must be a positive multiple of 32")
        if self.edge_radius < 1 or self.checkpoint_every < 1 or self.schedule_ramp_epochs < 0:
            raise ConfigError("edge_radius and checkpoint_every must be >= 1, schedule_ramp_epochs >= 0")
        n_branches = len(TASK_BRANCHES[self.task])
        if self.branch_weights and len(self.branch_weights) != n_branches:
            raise ConfigError(f"branch_weights needs {n_branches} values for task {self.task}")
        if any(w < 0 for w in self.branch_weights):
            raise ConfigError("branch weights must be non-negative")
        try:
            net = self.network()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.tile_size < net.min_input:
            raise ConfigError(f"tile_size {self.tile_size} leaves the bottleneck too small for craspp_rates "
                              f"{self.craspp_rates}; need tile_size >= {net.min_input}")
        return self

    def network(self, dtype: str = "f32") -> NetworkConfig:
        return NetworkConfig(task=self.task, sl_counts=self.sl_profile, growth_rate=self.growth_rate,
                             stem_channels=self.stem_channels, craspp_rates=self.craspp_rates,
                             lkbr_k=self.lkbr_k, use_lkbr=self.use_lkbr,
                             head_init=self.head_init, seed=self.seed, dtype=dtype)

    def branch_weight_map(self) -> dict[str, float]:
        names = [n for n, _ in TASK_BRANCHES[self.task]]
        weights = self.branch_weights or (1.0,) * len(names)
        return dict(zip(names, weights))

    def with_(self, **kw) -> "RunConfig":
        return replace(self, **kw).validate()


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _parse_bool(s: str) -> bool:
    low = s.lower()
    if low == "true":
        return True
    if low == "false":
        return False
    raise ValueError(f"expected true or false, got {s!r}")


def _convert(key: str, raw: str):
    kind = _TYPES[key]
    if key == "sl_profile":
        return profile(raw)
    if kind == "tuple[int, ...]":
        return tuple(int(v) for v in raw.split(",") if v.strip())
    if kind == "tuple[float, ...]":
        return tuple(float(v) for v in raw.split(",") if v.strip())
    if kind == "bool":
        return _parse_bool(raw)
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    return raw


def parse(text: str, base: RunConfig | None = None) -> RunConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment; unknown keys are errors."""
    values = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in _TYPES:
            raise ConfigError(f"line {n}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {n}: duplicate key {key!r}")
        try:
            values[key] = _convert(key, raw)
        except ValueError as exc:
            raise ConfigError(f"line {n}: bad value for {key}: {exc}") from exc
    return replace(base or RunConfig(), **values).validate()


def load(path=None, env=None) -> RunConfig:
    """Read a config file (or defaults) and apply the seed override from the environment."""
    if path is None:
        cfg = RunConfig().validate()
    else:
        try:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        cfg = parse(text)
    env = os.environ if env is None else env
    if env.get(SEED_ENV):
        try:
            cfg = cfg.with_(seed=int(env[SEED_ENV]))
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV} must be an integer") from exc
    return cfg


def dump(cfg: RunConfig) -> str:
    lines = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, bool):
            s = "true" if v else "false"
        elif isinstance(v, tuple):
            s = ",".join(repr(x) if isinstance(x, float) else str(x) for x in v)
        else:
            s = repr(v) if isinstance(v, float) else str(v)
        lines.append(f"{f.name} = {s}")
    return "\n".join(lines) + "\n"
