"""Rasterise micro-world trajectories into videos and exact object masks."""
from __future__ import annotations

from functools import lru_cache

import numpy as np

from .world import COLORS


@lru_cache(maxsize=None)
def sprite(shape: str, size: int) -> np.ndarray:
    """Boolean [size x size] footprint of ``shape``."""
    r, c = np.mgrid[0:size, 0:size]
    half = size / 2.0
    if shape == "square":
        out = np.ones((size, size), dtype=bool)
    elif shape == "circle":
        out = (r + 0.5 - half) ** 2 + (c + 0.5 - half) ** 2 <= 0.78 * half * half
    elif shape == "triangle":
        out = np.abs(c + 0.5 - half) < (r + 1) / 2.0 + 0.01
    else:
        raise ValueError(f"unknown shape {shape!r}")
    out.setflags(write=False)
    return out


def owner_map(entities, height: int, width: int) -> np.ndarray:
    """[H x W] int map of the topmost entity id per pixel (-1 = background).

    Entities are drawn in list order, so later entities occlude earlier ones.
    """
    owner = np.full((height, width), -1, dtype=np.int64)
    for e in entities:
        fp = sprite(e.shape, e.size)
        owner[e.row:e.row + e.size, e.col:e.col + e.size][fp] = e.id
    return owner


def render_frame(entities, height: int, width: int, channels: int = 3) -> np.ndarray:
    frame = np.zeros((height, width, channels))
    owner = owner_map(entities, height, width)
    for e in entities:
        rgb = np.asarray(COLORS[e.color])
        px = owner == e.id
        if channels == 3:
            frame[px] = rgb
        else:
            frame[px, 0] = rgb.mean()
    return frame


def render(trajectory, height: int = 32, width: int = 32, channels: int = 3, keyframes=()):
    """Render every frame; returns ``(frames [T x H x W x C], masks)`` where
    ``masks`` maps each requested keyframe index to its object masks."""
    from ..perception import synthetic_mask_oracle

    frames = np.stack([render_frame(state, height, width, channels) for state in trajectory])
    masks = {k: synthetic_mask_oracle(trajectory, k, height, width) for k in keyframes}
    return frames, masks
