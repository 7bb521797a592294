"""Overlapping tile grids and probability-map stitching."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _origins(dim: int, size: int, stride: int) -> list[int]:
    out = [0]
    while out[-1] + size < dim:
        out.append(min(out[-1] + stride, dim - size))
    return out


@dataclass(frozen=True)
class TileGrid:
    height: int
    width: int
    tile_h: int
    tile_w: int
    rows: tuple[int, ...]
    cols: tuple[int, ...]

    @property
    def origins(self) -> list[tuple[int, int]]:
        return [(r, c) for r in self.rows for c in self.cols]

    def __len__(self) -> int:
        return len(self.rows) * len(self.cols)

    def split(self, arr: np.ndarray) -> list[np.ndarray]:
        """Cut ``arr`` (trailing two axes are H, W) into tiles in origin order."""
        return [arr[..., r:r + self.tile_h, c:c + self.tile_w] for r, c in self.origins]


def tile(dims, size, overlap: float) -> TileGrid:
    """Tile an ``(H, W)`` extent with ``size`` tiles at the given overlap.

    stride = round(size·(1 − overlap)); the last origin on each axis is
    clamped to ``dim − size`` so every tile lies inside the image.
    """
    h, w = (int(d) for d in dims)
    th, tw = (size, size) if np.isscalar(size) else (int(s) for s in size)
    if not 0 <= overlap < 1:
        raise ValueError(f"overlap must be in [0, 1), got {overlap}")
    if th > h or tw > w or th < 1 or tw < 1:
        raise ValueError(f"tile {th}×{tw} does not fit image {h}×{w}")
    sh = max(1, int(round(th * (1 - overlap))))
    sw = max(1, int(round(tw * (1 - overlap))))
    return TileGrid(h, w, th, tw, tuple(_origins(h, th, sh)), tuple(_origins(w, tw, sw)))


def stitch(grid: TileGrid, tiles) -> np.ndarray:
    """Average per-tile ``[C, S, S]`` maps back onto the full ``[C, H, W]`` canvas."""
    tiles = list(tiles)
    if len(tiles) != len(grid):
        raise ValueError(f"expected {len(grid)} tiles, got {len(tiles)}")
    c = tiles[0].shape[0]
    acc = np.zeros((c, grid.height, grid.width), dtype=np.float64)
    hits = np.zeros((grid.height, grid.width), dtype=np.int32)
    for (r, col), t in zip(grid.origins, tiles):
        if t.shape != (c, grid.tile_h, grid.tile_w):
            raise ValueError(f"tile dims {t.shape} != {(c, grid.tile_h, grid.tile_w)}")
        acc[:, r:r + grid.tile_h, col:col + grid.tile_w] += t
        hits[r:r + grid.tile_h, col:col + grid.tile_w] += 1
    if hits.min() == 0:
        raise ValueError("tile grid leaves pixels uncovered")
    out = acc / hits
    return out.astype(tiles[0].dtype) if np.issubdtype(tiles[0].dtype, np.floating) else out
