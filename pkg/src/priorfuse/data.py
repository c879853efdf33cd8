"""Synthetic infrared/visible pairs for dataset-free training and evaluation.

Visible images carry band-limited noise texture and bright/dark geometric
outlines; infrared images are a smooth, dim background with Gaussian hot blobs.
The blob masks are returned so region statistics can be measured.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import InputError


@dataclass(frozen=True)
class PairSet:
    ir: np.ndarray      # [N, 1, H, W] in [0, 1]
    vis: np.ndarray     # [N, 1, H, W] in [0, 1]
    masks: np.ndarray   # [N, 1, H, W] bool, hot-blob regions

    def __len__(self) -> int:
        return self.ir.shape[0]

    def pairs(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return [(self.ir[i, 0], self.vis[i, 0]) for i in range(len(self))]


def _rescale(a: np.ndarray, lo: float, hi: float) -> np.ndarray:
    a = a - a.min()
    span = a.max()
    return lo + (hi - lo) * (a / span if span > 0 else a)


def _texture(rng: np.random.Generator, size: int) -> np.ndarray:
    noise = rng.standard_normal((size, size))
    band = ndimage.gaussian_filter(noise, 0.8) - ndimage.gaussian_filter(noise, 2.5)
    return band / (band.std() + 1e-12)


def _outlines(rng: np.random.Generator, size: int) -> np.ndarray:
    canvas = np.zeros((size, size))
    yy, xx = np.mgrid[:size, :size]
    for _ in range(rng.integers(2, 5)):
        sign = rng.choice([-1.0, 1.0])
        if rng.random() < 0.5:
            y0, x0 = rng.integers(2, size // 2, 2)
            h, w = rng.integers(size // 6, size // 2, 2)
            y1, x1 = min(y0 + h, size - 3), min(x0 + w, size - 3)
            box = (yy >= y0) & (yy <= y1) & (xx >= x0) & (xx <= x1)
            inner = (yy > y0) & (yy < y1) & (xx > x0) & (xx < x1)
            canvas[box & ~inner] = sign
        else:
            cy, cx = rng.uniform(size * 0.2, size * 0.8, 2)
            r = rng.uniform(size * 0.08, size * 0.25)
            d = np.hypot(yy - cy, xx - cx)
            canvas[np.abs(d - r) < 0.7] = sign
    return canvas


def make_pair(rng: np.random.Generator, size: int = 64) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One (ir, vis, blob_mask) triple of shape [size, size]."""
    vis = 0.45 + 0.12 * _texture(rng, size) + 0.3 * _outlines(rng, size)
    vis = np.clip(vis, 0.0, 1.0)

    background = _rescale(ndimage.gaussian_filter(rng.standard_normal((size, size)), size / 6), 0.1, 0.3)
    yy, xx = np.mgrid[:size, :size]
    heat = np.zeros((size, size))
    mask = np.zeros((size, size), dtype=bool)
    for _ in range(rng.integers(1, 4)):
        cy, cx = rng.uniform(size * 0.15, size * 0.85, 2)
        sigma = rng.uniform(size / 16, size / 8)
        amp = rng.uniform(0.6, 0.75)
        g = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma**2))
        heat = np.maximum(heat, amp * g)
        mask |= g > 0.5
    ir = np.clip(background + heat, 0.0, 1.0)
    return ir, vis, mask


def synthetic_pairs(n: int, size: int = 64, seed: int = 0) -> PairSet:
    if n < 1:
        raise InputError(f"need at least one pair, got {n}")
    rng = np.random.default_rng(seed)
    triples = [make_pair(rng, size) for _ in range(n)]
    ir, vis, masks = (np.stack([t[j] for t in triples])[:, None] for j in range(3))
    return PairSet(ir, vis, masks)


def as_arrays(dataset) -> tuple[np.ndarray, np.ndarray]:
    """Stack a PairSet or a list of (ir, vis) 2-D pairs into [N, 1, H, W] arrays."""
    if isinstance(dataset, PairSet):
        return dataset.ir, dataset.vis
    pairs = list(dataset)
    if not pairs:
        raise InputError("dataset is empty")
    ir, vis = [], []
    for i, (a, b) in enumerate(pairs):
        a, b = np.squeeze(np.asarray(a, dtype=np.float64)), np.squeeze(np.asarray(b, dtype=np.float64))
        if a.shape != b.shape or a.ndim != 2:
            raise InputError(f"pair {i}: infrared {a.shape} and visible {b.shape} must be equal 2-D shapes")
        ir.append(a)
        vis.append(b)
    shapes = {a.shape for a in ir}
    if len(shapes) != 1:
        raise InputError(f"dataset mixes image sizes {sorted(shapes)}")
    return np.stack(ir)[:, None], np.stack(vis)[:, None]
