"""Polar shape codec: masks <-> center+radii shapes <-> polygons <-> masks.

Geometry conventions used across the whole package:
  - image axes: x grows right, y grows down
  - pixel (row i, col j) has center coordinate (j + 0.5, i + 0.5)
  - ray k of an n-ray shape points along (sin theta_k, cos theta_k) with
    theta_k = k * 2*pi/n for k = 1..n (angle measured from the +y axis)
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

DEFAULT_RAYS = 36
MIN_RADIUS = 0.01      # degenerate rays (no boundary crossing) fall back to this
RAY_STEP = 0.25        # marching step in pixels; one bisection step refines


class EmptyMask(ValueError):
    """Raised when an operation needs at least one foreground pixel."""


class DimensionMismatch(ValueError):
    """Raised when two masks of different sizes are combined."""


@dataclass(frozen=True)
class BitMask:
    """Binary H x W mask with an O(1) foreground count."""

    bits: np.ndarray
    count: int = field(init=False)

    def __post_init__(self):
        bits = np.ascontiguousarray(self.bits, dtype=bool)
        if bits.ndim != 2 or bits.shape[0] < 1 or bits.shape[1] < 1:
            raise ValueError(f"mask must be 2-D and non-degenerate, got shape {bits.shape}")
        bits.flags.writeable = False
        object.__setattr__(self, "bits", bits)
        object.__setattr__(self, "count", int(bits.sum()))

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]


@dataclass(frozen=True)
class PolarShape:
    """Instance as a pole plus n positive radii on the fixed angular grid."""

    center: tuple[float, float]
    radii: np.ndarray

    def __post_init__(self):
        radii = np.ascontiguousarray(self.radii, dtype=np.float64)
        if radii.ndim != 1 or radii.size < 3:
            raise ValueError("a polar shape needs at least 3 radii")
        if not np.all(radii > 0):
            raise ValueError("all radii must be positive")
        radii.flags.writeable = False
        object.__setattr__(self, "radii", radii)

    @property
    def num_rays(self) -> int:
        return self.radii.size


@dataclass(frozen=True)
class Polygon:
    """Ordered vertex list; simple by construction when built from a PolarShape."""

    vertices: np.ndarray

    def __post_init__(self):
        verts = np.ascontiguousarray(self.vertices, dtype=np.float64)
        if verts.ndim != 2 or verts.shape[1] != 2 or verts.shape[0] < 3:
            raise ValueError("polygon needs >= 3 (x, y) vertices")
        verts.flags.writeable = False
        object.__setattr__(self, "vertices", verts)


def ray_angles(n: int = DEFAULT_RAYS) -> np.ndarray:
    """theta_k = k * 2pi/n for k = 1..n."""
    if n < 3:
        raise ValueError("need at least 3 rays")
    return np.arange(1, n + 1, dtype=np.float64) * (2.0 * math.pi / n)


def ray_directions(n: int = DEFAULT_RAYS) -> np.ndarray:
    """(n, 2) unit vectors; x component is sin(theta), y component is cos(theta)."""
    ang = ray_angles(n)
    return np.stack([np.sin(ang), np.cos(ang)], axis=1)


def mass_center(mask: BitMask) -> tuple[float, float]:
    """Arithmetic mean of foreground pixel-center coordinates."""
    if mask.count == 0:
        raise EmptyMask("mass_center of an empty mask")
    rows, cols = np.nonzero(mask.bits)
    return (float(cols.mean()) + 0.5, float(rows.mean()) + 0.5)


def _points_inside(bits: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Membership of continuous points: the pixel containing each point is foreground."""
    h, w = bits.shape
    jj = np.floor(xs).astype(np.int64)
    ii = np.floor(ys).astype(np.int64)
    ok = (ii >= 0) & (ii < h) & (jj >= 0) & (jj < w)
    inside = np.zeros(xs.shape, dtype=bool)
    if ok.any():
        inside[ok] = bits[ii[ok], jj[ok]]
    return inside


def radii_from_pole(mask: BitMask, pole: tuple[float, float], n: int = DEFAULT_RAYS) -> np.ndarray:
    """March each ray outward from the pole and keep the largest boundary crossing.

    Marching step is RAY_STEP with one bisection refinement at the last
    inside->outside transition. Rays that never leave background get MIN_RADIUS.
    """
    if mask.count == 0:
        raise EmptyMask("cannot cast rays into an empty mask")
    h, w = mask.height, mask.width
    px, py = pole
    dirs = ray_directions(n)
    corners = np.array([[0.0, 0.0], [w, 0.0], [0.0, h], [w, h]])
    rmax = float(np.max(np.hypot(corners[:, 0] - px, corners[:, 1] - py))) + 1.0
    steps = np.arange(0.0, rmax + RAY_STEP, RAY_STEP)

    xs = px + dirs[:, 0:1] * steps[None, :]
    ys = py + dirs[:, 1:2] * steps[None, :]
    inside = _points_inside(mask.bits, xs, ys)

    # last inside->outside transition per ray
    trans = inside[:, :-1] & ~inside[:, 1:]
    has = trans.any(axis=1)
    last = trans.shape[1] - 1 - np.argmax(trans[:, ::-1], axis=1)
    lo = steps[last]
    hi = steps[last + 1]

    mid = 0.5 * (lo + hi)
    mid_in = _points_inside(mask.bits, px + dirs[:, 0] * mid, py + dirs[:, 1] * mid)
    lo = np.where(mid_in, mid, lo)
    hi = np.where(mid_in, hi, mid)

    radii = np.where(has, 0.5 * (lo + hi), MIN_RADIUS)
    return np.maximum(radii, MIN_RADIUS)


def encode(mask: BitMask, n: int = DEFAULT_RAYS) -> PolarShape:
    """Mask -> polar shape with the pole at the mask's mass center."""
    center = mass_center(mask)
    return PolarShape(center=center, radii=radii_from_pole(mask, center, n))


def decode(shape: PolarShape) -> Polygon:
    """Polar shape -> polygon, vertex k at center + r_k * (sin theta_k, cos theta_k)."""
    dirs = ray_directions(shape.num_rays)
    verts = np.asarray(shape.center, dtype=np.float64)[None, :] + shape.radii[:, None] * dirs
    return Polygon(vertices=verts)


def rasterize(polygon: Polygon, height: int, width: int) -> BitMask:
    """Scanline even-odd fill; a pixel is set when its center lies inside."""
    v = polygon.vertices
    x1, y1 = v[:, 0], v[:, 1]
    x2, y2 = np.roll(x1, -1), np.roll(y1, -1)
    bits = np.zeros((height, width), dtype=bool)
    for i in range(height):
        yc = i + 0.5
        crossing = ((y1 <= yc) & (yc < y2)) | ((y2 <= yc) & (yc < y1))
        if not crossing.any():
            continue
        xa, xb = x1[crossing], x2[crossing]
        ya, yb = y1[crossing], y2[crossing]
        xs = np.sort(xa + (yc - ya) * (xb - xa) / (yb - ya))
        for a, b in zip(xs[0::2], xs[1::2]):
            j0 = max(0, math.ceil(a - 0.5))
            j1 = min(width - 1, math.ceil(b - 0.5) - 1)
            if j1 >= j0:
                bits[i, j0:j1 + 1] = True
    return BitMask(bits)


def mask_iou(a: BitMask, b: BitMask) -> float:
    """Intersection over union; two empty masks agree perfectly (1.0)."""
    if (a.height, a.width) != (b.height, b.width):
        raise DimensionMismatch(
            f"mask sizes differ: {a.height}x{a.width} vs {b.height}x{b.width}")
    inter = int(np.logical_and(a.bits, b.bits).sum())
    union = a.count + b.count - inter
    if union == 0:
        return 1.0
    return inter / union


def shape_to_json(shape: PolarShape) -> str:
    return json.dumps({
        "cx": shape.center[0],
        "cy": shape.center[1],
        "radii": [float(r) for r in shape.radii],
    })


def shape_from_json(line: str) -> PolarShape:
    obj = json.loads(line)
    return PolarShape(center=(float(obj["cx"]), float(obj["cy"])),
                      radii=np.asarray(obj["radii"], dtype=np.float64))


def write_shapes(path, shapes) -> None:
    """One JSON object per line: {"cx", "cy", "radii": [...]}."""
    with open(path, "w", encoding="utf-8") as fh:
        for shape in shapes:
            fh.write(shape_to_json(shape) + "\n")


def read_shapes(path) -> list[PolarShape]:
    shapes = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                shapes.append(shape_from_json(line))
    return shapes
