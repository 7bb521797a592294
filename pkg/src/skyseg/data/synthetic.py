"""Seeded synthetic aerial scenes with pixel-exact label masks.

Primitives are painted bottom to top: vegetation, buildings, roads (with
their sidewalks), lane markings, vehicles.  Every pixel ends with exactly
one label, taken from the last primitive that covered it.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .classes import DENSE20, DENSE_TO_CATEGORY, merge_classes

C = {name: i for i, name in enumerate(DENSE20)}

# default reduced alphabet, expressed as dense20 ids
BASIC_CLASSES = (C["low-vegetation"], C["paved-road"], C["sidewalk"], C["lane-marking"], C["building"], C["car"])

PALETTE = {
    "low-vegetation": (78, 140, 62),
    "paved-road": (88, 88, 94),
    "non-paved-road": (150, 125, 90),
    "paved-parking-place": (112, 112, 120),
    "non-paved-parking-place": (165, 140, 105),
    "bikeway": (170, 90, 80),
    "sidewalk": (185, 180, 168),
    "entrance-exit": (130, 130, 150),
    "danger-area": (210, 170, 40),
    "lane-marking": (245, 245, 240),
    "building": (160, 70, 55),
    "car": (30, 60, 200),
    "trailer": (200, 200, 90),
    "van": (220, 220, 235),
    "truck": (200, 40, 40),
    "large-truck": (120, 30, 120),
    "bus": (240, 150, 20),
    "clutter": (100, 70, 40),
    "impervious-surface": (140, 140, 140),
    "tree": (25, 85, 35),
}
COLORS = np.array([PALETTE[n] for n in DENSE20], dtype=np.float64)

LANE = {"non-lane-marking": 0, "dash-line": 1, "long-line": 2, "stop-line": 8, "zebra-zone": 9}


@dataclass(frozen=True)
class SceneSpec:
    """Scene recipe.  ``buildings`` and ``trees`` are expected counts per
    128×128 of canvas, ``roads`` per 128 px of the longer side, ``vehicles``
    per 128 px of road; ``markings`` scales how often lines are solid or
    carry stop lines."""

    seed: int = 0
    height: int = 512
    width: int = 512
    roads: float = 0.6
    buildings: float = 1.0
    vehicles: float = 1.5
    markings: float = 1.0
    trees: float = 0.0
    extended: bool = False
    class_set: str = "dense20"
    noise: float = 6.0

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise ValueError("canvas dims must be positive")
        for name in ("roads", "buildings", "vehicles", "markings", "trees", "noise"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.class_set not in ("dense20", "lane13", "category11"):
            raise ValueError(f"unknown class set {self.class_set!r}")


@dataclass
class LabeledImage:
    rgb: np.ndarray  # [H, W, 3] uint8
    mask: np.ndarray  # [H, W] uint8, labels in class_set
    class_set: str = "dense20"
    lanes: np.ndarray | None = field(default=None, repr=False)


def _count(rng, density: float, scale: float, at_least_one: bool = False) -> int:
    if density <= 0:
        return 0
    n = int(rng.poisson(density * scale))
    return max(n, 1) if at_least_one else n


class _Canvas:
    def __init__(self, h, w):
        self.h, self.w = h, w
        self.mask = np.full((h, w), C["low-vegetation"], dtype=np.uint8)
        self.lanes = np.zeros((h, w), dtype=np.uint8)

    def rect(self, r0, c0, r1, c1, label, lane=None):
        r0, c0 = max(0, r0), max(0, c0)
        r1, c1 = min(self.h, r1), min(self.w, c1)
        if r1 <= r0 or c1 <= c0:
            return
        self.mask[r0:r1, c0:c1] = label
        self.lanes[r0:r1, c0:c1] = 0 if lane is None else lane


def _vegetation(cv, rng, spec, scale):
    for _ in range(_count(rng, spec.trees, scale)):
        r = int(rng.integers(2, max(3, min(cv.h, cv.w) // 8)))
        cy, cx = int(rng.integers(0, cv.h)), int(rng.integers(0, cv.w))
        yy, xx = np.ogrid[:cv.h, :cv.w]
        cv.mask[(yy - cy) ** 2 + (xx - cx) ** 2 <= r * r] = C["tree"]


def _buildings(cv, rng, spec, scale):
    extra = ("impervious-surface", "clutter")
    for _ in range(_count(rng, spec.buildings, scale, at_least_one=True)):
        bh = int(rng.integers(max(2, cv.h // 12), max(3, cv.h // 4)))
        bw = int(rng.integers(max(2, cv.w // 12), max(3, cv.w // 4)))
        r0, c0 = int(rng.integers(0, max(1, cv.h - bh))), int(rng.integers(0, max(1, cv.w - bw)))
        label = C["building"]
        if spec.extended and rng.random() < 0.3:
            label = C[extra[int(rng.integers(len(extra)))]]
        cv.rect(r0, c0, r0 + bh, c0 + bw, label)


def _road_band(dim):
    return max(4, dim // 14)


def _roads(cv, rng, spec, scale):
    """Paint roads with sidewalks and return their geometry for later layers."""
    reach = max(cv.h, cv.w) / 128
    roads = []
    for _ in range(_count(rng, spec.roads, reach, at_least_one=True)):
        vertical = bool(rng.integers(2))
        span = cv.w if vertical else cv.h
        width = int(rng.integers(_road_band(span), _road_band(span) + max(2, span // 24)))
        walk = max(1, width // 4)
        pos = int(rng.integers(walk, max(walk + 1, span - width - walk)))
        surface = C["paved-road"]
        side = C["sidewalk"]
        if spec.extended:
            surface = C["non-paved-road"] if rng.random() < 0.3 else surface
            side = C["bikeway"] if rng.random() < 0.3 else side
        if vertical:
            cv.rect(0, pos - walk, cv.h, pos + width + walk, side)
            cv.rect(0, pos, cv.h, pos + width, surface)
        else:
            cv.rect(pos - walk, 0, pos + width + walk, cv.w, side)
            cv.rect(pos, 0, pos + width, cv.w, surface)
        roads.append((vertical, pos, width))
    if spec.extended:
        # parking lots and road furniture areas sit in the road layer too
        kinds = ("paved-parking-place", "non-paved-parking-place", "entrance-exit", "danger-area")
        for _ in range(_count(rng, 0.5, scale)):
            ph, pw = int(rng.integers(3, max(4, cv.h // 6))), int(rng.integers(3, max(4, cv.w // 6)))
            r0, c0 = int(rng.integers(0, max(1, cv.h - ph))), int(rng.integers(0, max(1, cv.w - pw)))
            cv.rect(r0, c0, r0 + ph, c0 + pw, C[kinds[int(rng.integers(len(kinds)))]])
    return roads


def _markings(cv, rng, spec, roads):
    for vertical, pos, width in roads:
        if spec.markings <= 0:
            continue
        thick = int(rng.integers(1, 4)) if width >= 8 else 1
        centre = pos + (width - thick) // 2
        length = cv.h if vertical else cv.w
        solid = rng.random() < 0.25 * spec.markings
        dash = max(3, length // 16)
        gap = dash
        start = int(rng.integers(0, dash + gap))
        segments = [(0, length)] if solid else [(s, s + dash) for s in range(start - dash - gap, length, dash + gap)]
        lane = LANE["long-line"] if solid else LANE["dash-line"]
        for a, b in segments:
            if vertical:
                cv.rect(a, centre, b, centre + thick, C["lane-marking"], lane)
            else:
                cv.rect(centre, a, centre + thick, b, C["lane-marking"], lane)
        if rng.random() < 0.3 * spec.markings:
            # transverse stop line across the road
            at = int(rng.integers(0, max(1, length - 2)))
            if vertical:
                cv.rect(at, pos, at + 2, pos + width, C["lane-marking"], LANE["stop-line"])
            else:
                cv.rect(pos, at, pos + width, at + 2, C["lane-marking"], LANE["stop-line"])


def _vehicles(cv, rng, spec, roads):
    kinds = ("car", "trailer", "van", "truck", "large-truck", "bus")
    for vertical, pos, width in roads:
        length = cv.h if vertical else cv.w
        for _ in range(_count(rng, spec.vehicles, length / 128)):
            label = C["car"]
            if spec.extended:
                label = C[kinds[int(rng.integers(len(kinds)))]]
            across = max(2, width // 3)
            along = max(3, int(across * rng.uniform(1.6, 2.6)))
            lane_off = int(rng.integers(0, max(1, width - across)))
            at = int(rng.integers(0, max(1, length - along)))
            if vertical:
                cv.rect(at, pos + lane_off, at + along, pos + lane_off + across, label)
            else:
                cv.rect(pos + lane_off, at, pos + lane_off + across, at + along, label)


def render(mask: np.ndarray, rng: np.random.Generator, noise: float) -> np.ndarray:
    rgb = COLORS[mask]
    if noise > 0:
        rgb = rgb + rng.normal(0.0, noise, size=rgb.shape)
    return np.clip(np.rint(rgb), 0, 255).astype(np.uint8)


def generate_scene(spec: SceneSpec) -> LabeledImage:
    rng = np.random.default_rng(spec.seed)
    cv = _Canvas(spec.height, spec.width)
    scale = spec.height * spec.width / (128 * 128)
    _vegetation(cv, rng, spec, scale)
    _buildings(cv, rng, spec, scale)
    roads = _roads(cv, rng, spec, scale) if spec.roads > 0 else []
    _markings(cv, rng, spec, roads)
    _vehicles(cv, rng, spec, roads)
    rgb = render(cv.mask, rng, spec.noise)
    if spec.class_set == "lane13":
        mask = cv.lanes.copy()
    elif spec.class_set == "category11":
        mask = merge_classes(cv.mask, DENSE_TO_CATEGORY)
    else:
        mask = cv.mask
    return LabeledImage(rgb, mask, spec.class_set, cv.lanes)
