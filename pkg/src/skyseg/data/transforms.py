"""Flips, edge-label derivation, GSD rescaling and per-branch targets."""
from __future__ import annotations

import numpy as np

DEFAULT_EDGE_RADIUS = 2


def flip_augment(img: np.ndarray, mask: np.ndarray, mode: str):
    """Mirror an ``[H, W, 3]`` image and its ``[H, W]`` mask together.

    ``h`` reverses columns, ``v`` reverses rows.
    """
    if mode == "h":
        axis = 1
    elif mode == "v":
        axis = 0
    else:
        raise ValueError(f"flip mode must be 'h' or 'v', got {mode!r}")
    return np.flip(img, axis=axis).copy(), np.flip(mask, axis=axis).copy()


def boundary_pixels(mask: np.ndarray) -> np.ndarray:
    """True where some 4-neighbour carries a different label."""
    m = np.asarray(mask)
    out = np.zeros(m.shape, dtype=bool)
    dv = m[1:, :] != m[:-1, :]
    dh = m[:, 1:] != m[:, :-1]
    out[1:, :] |= dv
    out[:-1, :] |= dv
    out[:, 1:] |= dh
    out[:, :-1] |= dh
    return out


def _dilate(edge: np.ndarray, radius: int) -> np.ndarray:
    """Chebyshev (square) dilation; separable as a row pass then a column pass."""
    if radius == 0:
        return edge
    h, w = edge.shape
    rows = np.zeros_like(edge)
    for d in range(-radius, radius + 1):
        lo, hi = max(0, d), min(w, w + d)
        rows[:, lo - d:hi - d] |= edge[:, lo:hi]
    out = np.zeros_like(edge)
    for d in range(-radius, radius + 1):
        lo, hi = max(0, d), min(h, h + d)
        out[lo - d:hi - d, :] |= rows[lo:hi, :]
    return out


def derive_edges(mask: np.ndarray, radius: int = DEFAULT_EDGE_RADIUS, background: int = 0):
    """Binary and multi-class edge maps from a dense label mask.

    Edge pixels are the 4-neighbour boundary grown by ``radius - 1``.  The
    multi-class map keeps the mask label on edge pixels and writes
    ``background`` everywhere else.
    """
    if radius < 1:
        raise ValueError("edge radius must be >= 1")
    mask = np.asarray(mask)
    edge = _dilate(boundary_pixels(mask), radius - 1)
    multi = np.where(edge, mask, background).astype(mask.dtype)
    return edge.astype(np.uint8), multi


def rescaled_dims(h: int, w: int, source_gsd: float, target_gsd: float) -> tuple[int, int]:
    if source_gsd <= 0 or target_gsd <= 0:
        raise ValueError("GSD values must be positive")
    s = source_gsd / target_gsd
    return max(1, int(round(h * s))), max(1, int(round(w * s)))


def _src_coords(n_out: int, n_in: int) -> np.ndarray:
    # pixel-centre alignment
    return (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5


def resize_bilinear(img: np.ndarray, h: int, w: int) -> np.ndarray:
    img = np.asarray(img)
    ih, iw = img.shape[:2]
    ys = np.clip(_src_coords(h, ih), 0, ih - 1)
    xs = np.clip(_src_coords(w, iw), 0, iw - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, ih - 1)
    x1 = np.minimum(x0 + 1, iw - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    if img.ndim == 3:
        fy, fx = fy[..., None], fx[..., None]
    a = img.astype(np.float64)
    top = a[y0][:, x0] * (1 - fx) + a[y0][:, x1] * fx
    bot = a[y1][:, x0] * (1 - fx) + a[y1][:, x1] * fx
    out = top * (1 - fy) + bot * fy
    if np.issubdtype(img.dtype, np.integer):
        info = np.iinfo(img.dtype)
        return np.clip(np.rint(out), info.min, info.max).astype(img.dtype)
    return out.astype(img.dtype)


def resize_nearest(mask: np.ndarray, h: int, w: int) -> np.ndarray:
    mask = np.asarray(mask)
    ih, iw = mask.shape[:2]
    ys = np.minimum((np.arange(h) * ih) // h, ih - 1)
    xs = np.minimum((np.arange(w) * iw) // w, iw - 1)
    return mask[ys][:, xs]


def rescale_gsd(img: np.ndarray, mask: np.ndarray | None, source_gsd: float, target_gsd: float):
    """Resample so one pixel covers ``target_gsd`` cm instead of ``source_gsd``.

    Image is bilinear, mask nearest-neighbour.  Equal GSDs return copies.
    """
    h, w = np.asarray(img).shape[:2]
    nh, nw = rescaled_dims(h, w, source_gsd, target_gsd)
    if source_gsd == target_gsd:
        return np.array(img, copy=True), None if mask is None else np.array(mask, copy=True)
    out_img = resize_bilinear(img, nh, nw)
    out_mask = None if mask is None else resize_nearest(mask, nh, nw)
    return out_img, out_mask


def branch_targets(task: str, mask: np.ndarray, edge_radius: int = DEFAULT_EDGE_RADIUS) -> dict[str, np.ndarray]:
    """Integer label maps for each output branch of ``task``.

    ``mask`` is in the task's own alphabet: dense20 for the dense and edge
    tasks, lane13 for lane13, category11 for category11.
    """
    mask = np.asarray(mask)
    if task == "dense20":
        binary, multi = derive_edges(mask, edge_radius)
        return {"semantic": mask, "edge_multi": multi, "edge_binary": binary}
    if task == "lane13":
        return {"lane_multi": mask, "lane_binary": (mask > 0).astype(np.uint8)}
    if task == "category11":
        return {"semantic": mask}
    if task == "edge-binary":
        return {"edge_binary": derive_edges(mask, edge_radius)[0]}
    if task == "edge-multi":
        return {"edge_multi": derive_edges(mask, edge_radius)[1]}
    raise ValueError(f"unknown task {task!r}")
