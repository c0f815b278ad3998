"""Latent traversals: observations grouped by binned latent value."""
from __future__ import annotations

import numpy as np

from ..imageio import tile_grid

EMPTY_BG = (40, 40, 40)
EMPTY_MARK = (200, 0, 200)


def empty_tile(shape=(32, 32, 3)) -> np.ndarray:
    """Grey tile crossed by a magenta diagonal, marking a bin with no members."""
    tile = np.empty(shape, dtype=np.uint8)
    tile[:] = EMPTY_BG
    n = min(shape[0], shape[1])
    idx = np.arange(n)
    tile[idx, idx] = EMPTY_MARK
    tile[idx, n - 1 - idx] = EMPTY_MARK
    return tile


def bin_assignments(values: np.ndarray, bins: int) -> np.ndarray:
    """Equal-width bin index in ``[0, bins)`` over the empirical range of ``values``."""
    values = np.asarray(values, dtype=np.float64)
    lo, hi = values.min(), values.max()
    if hi <= lo:
        return np.zeros(len(values), dtype=int)
    idx = np.floor((values - lo) / (hi - lo) * bins).astype(int)
    return np.clip(idx, 0, bins - 1)


def traverse(frames: np.ndarray, codes: np.ndarray, latent: int, bins: int = 8,
             mode: str = "mean", seed: int = 0) -> np.ndarray:
    """One row of ``bins`` tiles for latent ``latent``.

    ``mode='mean'`` averages member pixels, ``mode='sample'`` shows one member drawn
    uniformly with ``default_rng([seed, latent])``.
    """
    if mode not in ("mean", "sample"):
        raise ValueError(f"mode must be 'mean' or 'sample', got {mode!r}")
    if len(frames) != len(codes):
        raise ValueError("frames and codes must have the same length")
    which = bin_assignments(codes[:, latent], bins)
    rng = np.random.default_rng([seed, latent])
    row = np.empty((bins, *frames.shape[1:]), dtype=np.uint8)
    for b in range(bins):
        members = np.flatnonzero(which == b)
        if len(members) == 0:
            row[b] = empty_tile(frames.shape[1:])
        elif mode == "mean":
            row[b] = np.rint(frames[members].mean(axis=0, dtype=np.float64)).astype(np.uint8)
        else:
            row[b] = frames[rng.choice(members)]
    return row


def traversal_grid(frames, codes, bins: int = 8, mode: str = "mean", seed: int = 0):
    """(latent_dim, bins, H, W, 3) tiles, one row per latent."""
    return np.stack([traverse(frames, codes, i, bins, mode, seed) for i in range(codes.shape[1])])


def traversal_image(grid: np.ndarray) -> np.ndarray:
    return tile_grid(grid, pad=1, pad_value=255)


def color_centroid(tile: np.ndarray, color, background) -> tuple[float, float] | None:
    """(x, y) centroid of pixels weighted by how far they moved from ``background``
    toward ``color``; None when no pixel does."""
    t = tile.astype(np.float64)
    color = np.asarray(color, np.float64)
    bg = np.asarray(background, np.float64)
    axis = color - bg
    w = np.clip(((t - bg) @ axis) / (axis @ axis), 0.0, None)
    total = w.sum()
    if total <= 0:
        return None
    ys, xs = np.indices(w.shape)
    return float((w * xs).sum() / total), float((w * ys).sum() / total)
