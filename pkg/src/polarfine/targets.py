"""Ground-truth assignment onto the flat location enumeration.

A location is positive for an instance when it lies within
center_radius * stride of the instance mass center (a square window,
per axis) and the instance's largest radius falls in the level's size
band. Bands follow the strides: level with stride s owns largest radii
in (factor * s_prev, factor * s], open-ended at both extremes. When two
instances claim one location the smaller wins.

Each positive location gets its own radii target, re-encoded with the
pole at that location, and a centerness target sqrt(min r / max r) of
those radii. Background locations carry class -1 and centerness 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .codec import BitMask, mass_center, radii_from_pole
from .synth import SyntheticScene

CENTER_RADIUS = 1.5
RANGE_FACTOR = 4.0


@dataclass
class TargetSet:
    classes: np.ndarray       # (L,) int64, -1 = background
    centerness: np.ndarray    # (L,) float64 in [0, 1]
    pos_indices: np.ndarray   # (P,) flat indices of positives
    radii: np.ndarray         # (P, num_rays) float64 > 0

    @property
    def num_positive(self) -> int:
        return int(self.pos_indices.size)


def _level_bands(strides, factor):
    bands = []
    prev = 0.0
    for s in strides[:-1]:
        bands.append((prev, factor * s))
        prev = factor * s
    bands.append((prev, np.inf))
    return bands


def assign_targets(scene: SyntheticScene, level_shapes, strides, num_rays: int,
                   center_radius: float = CENTER_RADIUS,
                   range_factor: float = RANGE_FACTOR) -> TargetSet:
    masks = [BitMask(m) for m in scene.masks]
    centers = [mass_center(m) for m in masks]
    areas = [m.count for m in masks]
    max_r = [float(radii_from_pole(m, c, num_rays).max())
             for m, c in zip(masks, centers)]
    bands = _level_bands(strides, range_factor)

    total = sum(h * w for h, w in level_shapes)
    classes = np.full(total, -1, dtype=np.int64)
    centerness = np.zeros(total)
    pos_indices = []
    radii_rows = []

    base = 0
    for (h, w), stride, (lo, hi) in zip(level_shapes, strides, bands):
        in_band = [k for k in range(len(masks)) if lo < max_r[k] <= hi]
        if in_band:
            window = center_radius * stride
            jj = (np.tile(np.arange(w), h) + 0.5) * stride
            ii = (np.repeat(np.arange(h), w) + 0.5) * stride
            order = sorted(in_band, key=lambda k: (areas[k], k))
            # smaller instances assign last so they overwrite bigger ones
            for k in reversed(order):
                cx, cy = centers[k]
                hit = (np.abs(jj - cx) <= window) & (np.abs(ii - cy) <= window)
                for flat in np.nonzero(hit)[0]:
                    classes[base + flat] = scene.classes[k]
                    r = radii_from_pole(masks[k], (jj[flat], ii[flat]), num_rays)
                    idx = base + flat
                    centerness[idx] = np.sqrt(r.min() / r.max())
                    pos_indices.append((idx, r))
        base += h * w

    if pos_indices:
        pos_indices.sort(key=lambda t: t[0])
        # overwrite duplicates in enumeration order; keep the last writer
        dedup: dict[int, np.ndarray] = {}
        for idx, r in pos_indices:
            dedup[idx] = r
        idx_arr = np.fromiter(dedup.keys(), dtype=np.int64)
        order = np.argsort(idx_arr)
        idx_arr = idx_arr[order]
        radii_rows = [list(dedup.values())[i] for i in order]
        radii_arr = np.stack(radii_rows, axis=0)
    else:
        idx_arr = np.zeros(0, dtype=np.int64)
        radii_arr = np.zeros((0, num_rays))

    return TargetSet(classes=classes, centerness=centerness,
                     pos_indices=idx_arr, radii=radii_arr)


def hbb_target_map(scene: SyntheticScene, stride: int,
                   shape: tuple[int, int]) -> np.ndarray:
    """Cell-center membership in any instance's axis-aligned box, {0,1}."""
    h, w = shape
    out = np.zeros((h, w))
    xs = (np.arange(w) + 0.5) * stride
    ys = (np.arange(h) + 0.5) * stride
    for m in scene.masks:
        rows, cols = np.nonzero(m)
        x0, x1 = cols.min(), cols.max() + 1.0
        y0, y1 = rows.min(), rows.max() + 1.0
        inside = ((ys[:, None] >= y0) & (ys[:, None] < y1)
                  & (xs[None, :] >= x0) & (xs[None, :] < x1))
        out[inside] = 1.0
    return out
