"""Label alphabets and total class maps between them."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

DENSE20 = (
    "low-vegetation",
    "paved-road",
    "non-paved-road",
    "paved-parking-place",
    "non-paved-parking-place",
    "bikeway",
    "sidewalk",
    "entrance-exit",
    "danger-area",
    "lane-marking",
    "building",
    "car",
    "trailer",
    "van",
    "truck",
    "large-truck",
    "bus",
    "clutter",
    "impervious-surface",
    "tree",
)

LANE13 = (
    "non-lane-marking",
    "dash-line",
    "long-line",
    "small-dash-line",
    "turn-sign",
    "plus-sign",
    "other-signs",
    "crosswalk",
    "stop-line",
    "zebra-zone",
    "no-parking-zone",
    "parking-zone",
    "other-lane-markings",
)

CATEGORY11 = (
    "nature",
    "driving-area",
    "parking-area",
    "human-area",
    "shared-human-vehicle-area",
    "road-feature",
    "residential-area",
    "dynamic-vehicle",
    "static-vehicle",
    "man-made-surface",
    "others",
)

POTSDAM6 = (
    "impervious-surface",
    "building",
    "low-vegetation",
    "tree",
    "vehicle",
    "clutter",
)

CLASS_SETS = {"dense20": DENSE20, "lane13": LANE13, "category11": CATEGORY11, "potsdam6": POTSDAM6}

BINARY = ("background", "edge")


class UnmappedLabelError(KeyError):
    pass


@dataclass(frozen=True)
class ClassMap:
    """Total map from every source class to one target class."""

    source: tuple[str, ...]
    target: tuple[str, ...]
    mapping: tuple[tuple[str, str], ...]

    def __post_init__(self):
        table = dict(self.mapping)
        missing = [s for s in self.source if s not in table]
        if missing:
            raise UnmappedLabelError(f"source classes without a target: {missing}")
        bad = [t for t in table.values() if t not in self.target]
        if bad:
            raise UnmappedLabelError(f"unknown target classes: {bad}")

    @classmethod
    def from_dict(cls, source: Sequence[str], target: Sequence[str], table: Mapping[str, str]) -> "ClassMap":
        return cls(tuple(source), tuple(target), tuple((s, table[s]) for s in source if s in table))

    def lookup(self) -> np.ndarray:
        """Index table: ``lookup()[source_id] == target_id``."""
        table = dict(self.mapping)
        return np.array([self.target.index(table[s]) for s in self.source], dtype=np.uint8)

    def __getitem__(self, name: str) -> str:
        return dict(self.mapping)[name]


def merge_classes(mask: np.ndarray, cmap: ClassMap) -> np.ndarray:
    mask = np.asarray(mask)
    if mask.size and mask.max() >= len(cmap.source):
        raise UnmappedLabelError(f"label {int(mask.max())} outside the {len(cmap.source)}-class source alphabet")
    return cmap.lookup()[mask]


_POTSDAM = {
    "low-vegetation": "low-vegetation",
    "paved-road": "impervious-surface",
    "non-paved-road": "impervious-surface",
    "paved-parking-place": "impervious-surface",
    "non-paved-parking-place": "impervious-surface",
    "bikeway": "impervious-surface",
    "sidewalk": "impervious-surface",
    "entrance-exit": "impervious-surface",
    "danger-area": "impervious-surface",
    "lane-marking": "impervious-surface",
    "building": "building",
    "car": "vehicle",
    "trailer": "clutter",
    "van": "vehicle",
    "truck": "vehicle",
    "large-truck": "vehicle",
    "bus": "vehicle",
    "clutter": "clutter",
    "impervious-surface": "impervious-surface",
    "tree": "tree",
}

_CATEGORY = {
    "low-vegetation": "nature",
    "tree": "nature",
    "paved-road": "driving-area",
    "non-paved-road": "driving-area",
    "paved-parking-place": "parking-area",
    "non-paved-parking-place": "parking-area",
    "bikeway": "human-area",
    "sidewalk": "human-area",
    "danger-area": "human-area",
    "entrance-exit": "shared-human-vehicle-area",
    "lane-marking": "road-feature",
    "building": "residential-area",
    "car": "dynamic-vehicle",
    "van": "dynamic-vehicle",
    "truck": "dynamic-vehicle",
    "large-truck": "dynamic-vehicle",
    "bus": "dynamic-vehicle",
    "trailer": "static-vehicle",
    "impervious-surface": "man-made-surface",
    "clutter": "others",
}

DENSE_TO_POTSDAM = ClassMap.from_dict(DENSE20, POTSDAM6, _POTSDAM)
DENSE_TO_CATEGORY = ClassMap.from_dict(DENSE20, CATEGORY11, _CATEGORY)
