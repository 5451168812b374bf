"""Instance-agnostic boundary targets for the holistic boundary branch.

Outer borders are traced with the Suzuki-Abe border-following scheme
(8-connectivity, outer borders only, holes ignored). The virtual frame
outside the image counts as background, so pixels on the image edge are
boundary pixels. All traced points land on one low-resolution mask via
v -> floor(v / stride).

Points are (row, col) integer pairs throughout this module.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .codec import BitMask, DimensionMismatch, EmptyMask

# 8-neighborhood in clockwise order for y-down images:
# E, SE, S, SW, W, NW, N, NE
_DI = (0, 1, 1, 1, 0, -1, -1, -1)
_DJ = (1, 1, 0, -1, -1, -1, 0, 1)
_DIR_INDEX = {(_DI[d], _DJ[d]): d for d in range(8)}


class StrideInvalid(ValueError):
    """Raised for a non-positive downsampling stride."""


@dataclass(frozen=True)
class BoundaryPointSet:
    """Per-instance closed border traversals.

    loops[i] holds one array of (row, col) points per outer border of
    instance i (several only when occlusion split the instance).
    """

    loops: tuple
    height: int
    width: int

    @property
    def num_instances(self) -> int:
        return len(self.loops)

    def instance_points(self, i: int) -> np.ndarray:
        return np.concatenate(self.loops[i], axis=0)

    def all_points(self) -> np.ndarray:
        flat = [arr for inst in self.loops for arr in inst]
        return np.concatenate(flat, axis=0)


def _trace_outer_border(bits: np.ndarray, si: int, sj: int) -> np.ndarray:
    """Follow one outer border starting at its uppermost-leftmost pixel."""
    h, w = bits.shape

    def fg(i, j):
        return 0 <= i < h and 0 <= j < w and bits[i, j]

    # clockwise scan from the W neighbor for the first foreground pixel
    first = None
    for t in range(8):
        d = (4 + t) % 8
        if fg(si + _DI[d], sj + _DJ[d]):
            first = (si + _DI[d], sj + _DJ[d])
            break
    if first is None:
        return np.array([[si, sj]], dtype=np.int64)

    border = []
    prev = first
    cur = (si, sj)
    limit = 4 * int(bits.sum()) + 8
    for _ in range(limit):
        d_prev = _DIR_INDEX[(prev[0] - cur[0], prev[1] - cur[1])]
        nxt = None
        for t in range(1, 9):
            d = (d_prev - t) % 8
            ni, nj = cur[0] + _DI[d], cur[1] + _DJ[d]
            if fg(ni, nj):
                nxt = (ni, nj)
                break
        border.append(cur)
        if nxt == (si, sj) and cur == first:
            return np.asarray(border, dtype=np.int64)
        prev, cur = cur, nxt
    raise RuntimeError("border following failed to close")  # pragma: no cover


def _components(bits: np.ndarray) -> np.ndarray:
    """8-connected component labels, 0 = background."""
    h, w = bits.shape
    labels = np.zeros((h, w), dtype=np.int32)
    current = 0
    for i in range(h):
        for j in range(w):
            if bits[i, j] and labels[i, j] == 0:
                current += 1
                stack = [(i, j)]
                labels[i, j] = current
                while stack:
                    ci, cj = stack.pop()
                    for d in range(8):
                        ni, nj = ci + _DI[d], cj + _DJ[d]
                        if 0 <= ni < h and 0 <= nj < w and bits[ni, nj] \
                                and labels[ni, nj] == 0:
                            labels[ni, nj] = current
                            stack.append((ni, nj))
    return labels


def extract_boundaries(masks: list[BitMask]) -> BoundaryPointSet:
    """Trace the outer border of every instance (per connected component)."""
    if not masks:
        return BoundaryPointSet(loops=(), height=0, width=0)
    h, w = masks[0].height, masks[0].width
    loops = []
    for mask in masks:
        if mask.count == 0:
            raise EmptyMask("cannot trace an empty instance")
        if (mask.height, mask.width) != (h, w):
            raise DimensionMismatch("instance masks must share one image size")
        labels = _components(mask.bits)
        inst_loops = []
        for lab in range(1, labels.max() + 1):
            rows, cols = np.nonzero(labels == lab)
            k = np.lexsort((cols, rows))[0]  # uppermost, then leftmost
            inst_loops.append(_trace_outer_border(labels == lab, int(rows[k]), int(cols[k])))
        loops.append(tuple(inst_loops))
    return BoundaryPointSet(loops=tuple(loops), height=h, width=w)


def build_boundary_mask(points: BoundaryPointSet, stride: int,
                        height: int, width: int) -> BitMask:
    """Draw all traced points on one ceil(H/s) x ceil(W/s) mask via floor division."""
    if stride < 1:
        raise StrideInvalid(f"stride must be >= 1, got {stride}")
    out_h = -(-height // stride)
    out_w = -(-width // stride)
    bits = np.zeros((out_h, out_w), dtype=bool)
    if points.num_instances > 0:
        pts = points.all_points() // stride
        keep = (pts[:, 0] < out_h) & (pts[:, 1] < out_w)
        bits[pts[keep, 0], pts[keep, 1]] = True
    return BitMask(bits)
