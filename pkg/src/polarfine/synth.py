"""Procedural scene generation for training and evaluation.

Scenes are single-channel images with a smooth textured background,
pixel noise, and a handful of star-convex shapes (ellipses, rotated
rectangles, radial stars) drawn back to front. Class identity is the
shape family, reinforced by per-class intensity bands. Occlusion is
resolved to visible masks; instances that end up tiny, split into
pieces, holed, or with their mass center occluded away are dropped so
every kept instance has a usable pole.

Everything is driven by one numpy Generator; the same (config, seed)
pair always yields the same scene.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .codec import BitMask, mass_center

SHAPE_NAMES = ("ellipse", "rectangle", "star")

# fill intensity band per class; bands overlap a little on purpose
_CLASS_LEVELS = (0.62, 0.74, 0.86)


@dataclass(frozen=True)
class SceneConfig:
    height: int = 64
    width: int = 64
    min_instances: int = 1
    max_instances: int = 4
    min_radius: float = 7.0
    max_radius: float = 16.0
    noise: float = 0.02
    num_classes: int = 3

    def __post_init__(self):
        if self.height < 8 or self.width < 8:
            raise ValueError("scene too small")
        if not (1 <= self.min_instances <= self.max_instances):
            raise ValueError("bad instance count range")
        if not (2.0 <= self.min_radius <= self.max_radius):
            raise ValueError("bad radius range")
        if self.max_radius * 2 > min(self.height, self.width):
            raise ValueError("shapes too large for the scene")
        if not (1 <= self.num_classes <= 3):
            raise ValueError("num_classes must be 1..3")
        if self.noise < 0:
            raise ValueError("noise must be >= 0")


@dataclass
class SyntheticScene:
    image: np.ndarray            # (H, W) float64 in [0, 1]
    masks: list[np.ndarray]      # visible footprints, bool (H, W)
    classes: list[int]

    @property
    def bitmasks(self) -> list[BitMask]:
        return [BitMask(m) for m in self.masks]


def _smooth_field(rng, h: int, w: int, cells: int = 5) -> np.ndarray:
    """Bilinear blow-up of a coarse noise grid, values roughly [-1, 1]."""
    g = rng.normal(size=(cells, cells))
    ys = np.linspace(0.0, cells - 1.0, h)
    xs = np.linspace(0.0, cells - 1.0, w)
    y0 = np.minimum(ys.astype(np.int64), cells - 2)
    x0 = np.minimum(xs.astype(np.int64), cells - 2)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    a = g[y0][:, x0]
    b = g[y0][:, x0 + 1]
    c = g[y0 + 1][:, x0]
    d = g[y0 + 1][:, x0 + 1]
    return (a * (1 - fy) * (1 - fx) + b * (1 - fy) * fx
            + c * fy * (1 - fx) + d * fy * fx) / 2.0


def _pixel_grid(h: int, w: int):
    ys, xs = np.mgrid[0:h, 0:w]
    return xs + 0.5, ys + 0.5


def _footprint(kind: int, cx, cy, size, aspect, rot, extra, h, w) -> np.ndarray:
    px, py = _pixel_grid(h, w)
    dx = px - cx
    dy = py - cy
    u = dx * np.cos(rot) + dy * np.sin(rot)
    v = -dx * np.sin(rot) + dy * np.cos(rot)
    if kind == 0:
        return (u / size) ** 2 + (v / (size * aspect)) ** 2 <= 1.0
    if kind == 1:
        return (np.abs(u) <= size) & (np.abs(v) <= size * aspect)
    # radial star: r(phi) = size * (1 - amp + amp*cos(k*phi)) stays positive
    points, amp = extra
    phi = np.arctan2(v, u)
    rb = size * (1.0 - amp + amp * np.cos(points * phi))
    return dx * dx + dy * dy <= rb * rb


def _flood(mask: np.ndarray, starts, four_conn: bool) -> np.ndarray:
    """Reachable region of mask (True cells) from the start cells."""
    h, w = mask.shape
    seen = np.zeros_like(mask)
    q = deque()
    for i, j in starts:
        if mask[i, j] and not seen[i, j]:
            seen[i, j] = True
            q.append((i, j))
    if four_conn:
        steps = ((-1, 0), (1, 0), (0, -1), (0, 1))
    else:
        steps = tuple((di, dj) for di in (-1, 0, 1) for dj in (-1, 0, 1)
                      if di or dj)
    while q:
        i, j = q.popleft()
        for di, dj in steps:
            ni, nj = i + di, j + dj
            if 0 <= ni < h and 0 <= nj < w and mask[ni, nj] and not seen[ni, nj]:
                seen[ni, nj] = True
                q.append((ni, nj))
    return seen


def _usable(mask: np.ndarray, min_pixels: int) -> bool:
    count = int(mask.sum())
    if count < min_pixels:
        return False
    idx = np.argwhere(mask)
    first = tuple(idx[0])
    if int(_flood(mask, [first], four_conn=False).sum()) != count:
        return False
    r0, c0 = idx.min(axis=0)
    r1, c1 = idx.max(axis=0) + 1
    sub = np.pad(mask[r0:r1, c0:c1], 1)
    outside = _flood(~sub, [(0, 0)], four_conn=True)
    if bool((~sub & ~outside).any()):
        return False  # enclosed hole
    cx, cy = mass_center(BitMask(mask))
    return bool(mask[int(cy), int(cx)])


def generate_scene(config: SceneConfig, rng: np.random.Generator) -> SyntheticScene:
    h, w = config.height, config.width
    for _ in range(24):
        scene = _attempt(config, rng, h, w)
        if scene is not None:
            return scene
    raise RuntimeError("could not place the requested instances; loosen the config")


def _attempt(config, rng, h, w) -> SyntheticScene | None:
    count = int(rng.integers(config.min_instances, config.max_instances + 1))
    kinds = rng.integers(0, config.num_classes, size=count)
    margin = config.min_radius * 0.75
    footprints = []
    fills = []
    for kind in kinds:
        cx = rng.uniform(margin, w - margin)
        cy = rng.uniform(margin, h - margin)
        size = rng.uniform(config.min_radius, config.max_radius)
        aspect = rng.uniform(0.45, 1.0)
        rot = rng.uniform(0.0, np.pi)
        extra = (int(rng.integers(5, 8)), rng.uniform(0.12, 0.28))
        footprints.append(_footprint(int(kind), cx, cy, size, aspect, rot, extra, h, w))
        fills.append(np.clip(_CLASS_LEVELS[int(kind)] + rng.normal(0.0, 0.04),
                             0.05, 0.98))

    min_pixels = max(25, int(0.2 * np.pi * config.min_radius ** 2))
    visible = []
    keep = []
    for i in range(count):
        vis = footprints[i].copy()
        for j in range(i + 1, count):
            vis &= ~footprints[j]
        if _usable(vis, min_pixels):
            visible.append(vis)
            keep.append(i)
    if len(visible) < config.min_instances:
        return None

    image = 0.38 + 0.1 * _smooth_field(rng, h, w)
    for i in range(count):  # back to front, occluders last
        image[footprints[i]] = fills[i]
    if config.noise > 0:
        image = image + rng.normal(0.0, config.noise, size=(h, w))
    image = np.clip(image, 0.0, 1.0)

    return SyntheticScene(image=image, masks=visible,
                          classes=[int(kinds[i]) for i in keep])


def scene_for_index(config: SceneConfig, base_seed: int, index: int) -> SyntheticScene:
    """Deterministic i-th scene of the dataset keyed by base_seed."""
    return generate_scene(config, np.random.default_rng((base_seed, index)))
