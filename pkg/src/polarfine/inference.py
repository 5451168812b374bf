"""Detection decoding: scores, top-k selection, and mask-overlap NMS.

Scores are sigmoid(class logit) * sigmoid(centerness logit). Survivors
are decoded to polygons, rasterized once, and suppressed greedily per
class by mask IoU. The HBB head never participates here.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .codec import BitMask, PolarShape, decode, mask_iou, rasterize
from .network import Model, level_locations

DEFAULT_SCORE_THRESH = 0.2
DEFAULT_TOPK = 100
DEFAULT_NMS_IOU = 0.5


@dataclass
class Detection:
    class_id: int
    score: float
    shape: PolarShape
    mask: BitMask

    def to_json(self) -> str:
        return json.dumps({
            "class": self.class_id, "score": round(self.score, 6),
            "cx": self.shape.center[0], "cy": self.shape.center[1],
            "radii": [round(float(r), 4) for r in self.shape.radii]})


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def mask_nms(dets: list[Detection], iou_thresh: float) -> list[Detection]:
    """Greedy class-wise suppression, highest score first."""
    kept: list[Detection] = []
    for det in sorted(dets, key=lambda d: -d.score):
        crowded = any(k.class_id == det.class_id
                      and mask_iou(k.mask, det.mask) > iou_thresh
                      for k in kept)
        if not crowded:
            kept.append(det)
    return kept


def decode_detections(model: Model, image: np.ndarray,
                      score_thresh: float = DEFAULT_SCORE_THRESH,
                      topk: int = DEFAULT_TOPK,
                      nms_iou: float = DEFAULT_NMS_IOU) -> list[Detection]:
    out = model.forward(image)
    h, w = image.shape
    cls_prob = _sigmoid(out.cls_flat.data)             # (L, C)
    cnt_prob = _sigmoid(out.cnt_flat.data)             # (L,)
    scores = cls_prob * cnt_prob[:, None]
    radii = out.radii.data                             # (L, n)
    centers = level_locations(out.level_shapes, out.strides)

    flat = scores.reshape(-1)
    candidates = np.nonzero(flat >= score_thresh)[0]
    if candidates.size > topk:
        candidates = candidates[np.argsort(-flat[candidates])[:topk]]

    num_classes = scores.shape[1]
    dets: list[Detection] = []
    for c in candidates:
        loc, cls = divmod(int(c), num_classes)
        shape = PolarShape(center=(float(centers[loc, 0]), float(centers[loc, 1])),
                           radii=radii[loc].copy())
        mask = rasterize(decode(shape), h, w)
        if mask.count == 0:
            continue
        dets.append(Detection(class_id=cls, score=float(flat[c]),
                              shape=shape, mask=mask))
    return mask_nms(dets, nms_iou)


def boundary_pixels(mask: BitMask) -> np.ndarray:
    """Foreground cells with a 4-neighbour outside the mask (or the frame)."""
    bits = mask.bits
    padded = np.pad(bits, 1)
    interior = (padded[:-2, 1:-1] & padded[2:, 1:-1]
                & padded[1:-1, :-2] & padded[1:-1, 2:])
    return bits & ~interior


_CLASS_COLORS = ((235, 64, 52), (52, 168, 83), (66, 103, 244))


def render_overlay(image: np.ndarray, dets: list[Detection]) -> np.ndarray:
    """Grayscale scene with detection boundaries painted per class, (H, W, 3)."""
    gray = np.clip(image, 0.0, 1.0)
    rgb = np.repeat((gray * 255).astype(np.uint8)[:, :, None], 3, axis=2)
    for det in dets:
        edge = boundary_pixels(det.mask)
        rgb[edge] = _CLASS_COLORS[det.class_id % len(_CLASS_COLORS)]
    return rgb
