"""On-disk dataset: ``images/NNNN.ppm``, ``masks/NNNN.pgm`` and ``manifest.txt``."""
from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import netpbm
from .classes import CLASS_SETS
from .synthetic import LabeledImage, SceneSpec, generate_scene


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class Entry:
    id: str
    width: int
    height: int
    class_set: str


def _atomic_text(path: Path, text: str) -> None:
    tmp = path.with_name(f"{path.name}.tmp{os.getpid()}")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def write_dataset(root, samples) -> list[Entry]:
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    entries = []
    for i, s in enumerate(samples):
        sid = f"{i:04d}"
        h, w = s.mask.shape
        netpbm.write(root / "images" / f"{sid}.ppm", s.rgb)
        netpbm.write(root / "masks" / f"{sid}.pgm", s.mask)
        entries.append(Entry(sid, w, h, s.class_set))
    # manifest last: a dataset without one is incomplete
    _atomic_text(root / "manifest.txt", "".join(f"{e.id},{e.width},{e.height},{e.class_set}\n" for e in entries))
    return entries


def generate_dataset(root, count: int, size: int, seed: int, class_set: str = "dense20", **spec_kw) -> list[Entry]:
    """``count`` synthetic scenes; scene ``i`` uses seed ``[seed, i]``."""
    if count < 0:
        raise ValueError("count must be >= 0")
    samples = []
    for i in range(count):
        scene_seed = int(np.random.SeedSequence([seed, i]).generate_state(1)[0])
        samples.append(generate_scene(SceneSpec(seed=scene_seed, height=size, width=size,
                                                class_set=class_set, **spec_kw)))
    return write_dataset(root, samples)


def read_manifest(root) -> list[Entry]:
    path = Path(root) / "manifest.txt"
    if not path.is_file():
        raise DatasetError(f"no manifest at {path}")
    entries = []
    for n, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.strip().split(",")
        if len(parts) != 4:
            raise DatasetError(f"{path}:{n}: expected id,width,height,class_set")
        sid, w, h, cs = parts
        if cs not in CLASS_SETS:
            raise DatasetError(f"{path}:{n}: unknown class set {cs!r}")
        try:
            entries.append(Entry(sid, int(w), int(h), cs))
        except ValueError as exc:
            raise DatasetError(f"{path}:{n}: bad dims") from exc
    return entries


def load_sample(root, entry: Entry) -> LabeledImage:
    root = Path(root)
    try:
        rgb = netpbm.read_ppm(root / "images" / f"{entry.id}.ppm")
        mask = netpbm.read_pgm(root / "masks" / f"{entry.id}.pgm")
    except (OSError, netpbm.NetpbmError) as exc:
        raise DatasetError(str(exc)) from exc
    if rgb.shape[:2] != mask.shape or mask.shape != (entry.height, entry.width):
        raise DatasetError(f"sample {entry.id}: dims disagree with manifest")
    n = len(CLASS_SETS[entry.class_set])
    if mask.size and mask.max() >= n:
        raise DatasetError(f"sample {entry.id}: label {mask.max()} outside {entry.class_set}")
    return LabeledImage(rgb, mask, entry.class_set)


def load_dataset(root) -> list[LabeledImage]:
    return [load_sample(root, e) for e in read_manifest(root)]
