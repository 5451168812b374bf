"""Mask-overlap average precision over a scene set.

Detections are matched greedily per image, class, and overlap threshold
(score order, best still-free ground truth wins). Precision-recall is
interpolated at 101 recall points; the headline number averages the ten
thresholds 0.50:0.05:0.95. Size buckets use area as a fraction of the
image so they mean the same thing at any resolution: small below 1.5%,
medium below 4.5%, large the rest. Bucket scoring uses ignore
semantics: ground truth outside the bucket neither counts nor
penalizes, and unmatched detections outside its area range are skipped.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .codec import BitMask, mask_iou
from .inference import Detection, decode_detections
from .network import Model
from .synth import SyntheticScene

IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
SMALL_FRAC = 0.015
MEDIUM_FRAC = 0.045


@dataclass
class EvalReport:
    ap: float
    ap50: float
    ap75: float
    ap_small: float
    ap_medium: float
    ap_large: float
    per_class: dict[int, float]
    num_images: int
    num_gt: int
    num_det: int

    def as_dict(self) -> dict:
        def clean(v):
            return None if (isinstance(v, float) and math.isnan(v)) else round(v, 4)
        return {"ap": clean(self.ap), "ap50": clean(self.ap50),
                "ap75": clean(self.ap75), "ap_small": clean(self.ap_small),
                "ap_medium": clean(self.ap_medium), "ap_large": clean(self.ap_large),
                "per_class": {str(k): clean(v) for k, v in self.per_class.items()},
                "num_images": self.num_images, "num_gt": self.num_gt,
                "num_det": self.num_det}

    def to_json(self) -> str:
        return json.dumps(self.as_dict())


def _interp_ap(scores: np.ndarray, is_tp: np.ndarray, num_gt: int) -> float:
    if num_gt == 0:
        return float("nan")
    if scores.size == 0:
        return 0.0
    order = np.argsort(-scores, kind="stable")
    tp = np.cumsum(is_tp[order])
    fp = np.cumsum(~is_tp[order])
    recall = tp / num_gt
    precision = tp / np.maximum(tp + fp, 1)
    grid = np.linspace(0.0, 1.0, 101)
    best = np.zeros_like(grid)
    for i, r in enumerate(grid):
        ok = recall >= r - 1e-12
        if ok.any():
            best[i] = precision[ok].max()
    return float(best.mean())


def _greedy_match(ious: np.ndarray, det_order, thresh: float) -> np.ndarray:
    """Per-detection matched gt index (-1 = none), gts used at most once."""
    num_det, num_gt = ious.shape
    assigned = np.full(num_det, -1, dtype=np.int64)
    free = np.ones(num_gt, dtype=bool)
    for d in det_order:
        if not free.any():
            break
        cand = np.where(free, ious[d], -1.0)
        g = int(np.argmax(cand))
        if cand[g] >= thresh:
            assigned[d] = g
            free[g] = False
    return assigned


class _ImageRecord:
    def __init__(self, dets: list[Detection], gt_masks, gt_classes, image_area):
        self.det_scores = np.array([d.score for d in dets])
        self.det_classes = np.array([d.class_id for d in dets], dtype=np.int64)
        self.det_areas = np.array([d.mask.count for d in dets], dtype=np.float64)
        self.gt_classes = np.asarray(gt_classes, dtype=np.int64)
        self.gt_areas = np.array([m.sum() for m in gt_masks], dtype=np.float64)
        self.image_area = float(image_area)
        self.ious = np.zeros((len(dets), len(gt_masks)))
        gbm = [BitMask(m) for m in gt_masks]
        for i, d in enumerate(dets):
            for j, g in enumerate(gbm):
                self.ious[i, j] = mask_iou(d.mask, g)


def _bucket_bounds(which: str, image_area: float) -> tuple[float, float]:
    if which == "small":
        return (0.0, SMALL_FRAC * image_area)
    if which == "medium":
        return (SMALL_FRAC * image_area, MEDIUM_FRAC * image_area)
    if which == "large":
        return (MEDIUM_FRAC * image_area, float("inf"))
    return (0.0, float("inf"))


def _class_ap(records: list[_ImageRecord], cls: int, thresholds,
              bucket: str = "all") -> float:
    aps = []
    for t in thresholds:
        scores, flags = [], []
        num_gt = 0
        for rec in records:
            lo, hi = _bucket_bounds(bucket, rec.image_area)
            gsel = np.nonzero(rec.gt_classes == cls)[0]
            in_bucket = (rec.gt_areas[gsel] >= lo) & (rec.gt_areas[gsel] < hi)
            num_gt += int(in_bucket.sum())
            dsel = np.nonzero(rec.det_classes == cls)[0]
            if dsel.size == 0:
                continue
            order = np.argsort(-rec.det_scores[dsel], kind="stable")
            sub = rec.ious[np.ix_(dsel, gsel)]
            assigned = _greedy_match(sub, order, t)
            for k, d in enumerate(dsel):
                g = assigned[k]
                if g >= 0:
                    if in_bucket[g]:
                        scores.append(rec.det_scores[d])
                        flags.append(True)
                    # matched outside the bucket: ignored entirely
                elif lo <= rec.det_areas[d] < hi:
                    scores.append(rec.det_scores[d])
                    flags.append(False)
        aps.append(_interp_ap(np.array(scores), np.array(flags, dtype=bool), num_gt))
    arr = np.array(aps)
    if np.isnan(arr).all():
        return float("nan")
    return float(np.nanmean(arr))


def evaluate_detections(per_image: list[tuple[list[Detection], list[np.ndarray],
                                              list[int]]],
                        image_area: float) -> EvalReport:
    records = [_ImageRecord(d, m, c, image_area) for d, m, c in per_image]
    classes = sorted({int(c) for rec in records for c in rec.gt_classes})

    def over_classes(thresholds, bucket="all"):
        vals = [_class_ap(records, c, thresholds, bucket) for c in classes]
        arr = np.array(vals, dtype=np.float64)
        return float("nan") if np.isnan(arr).all() else float(np.nanmean(arr))

    per_class = {c: _class_ap(records, c, IOU_THRESHOLDS) for c in classes}
    return EvalReport(
        ap=over_classes(IOU_THRESHOLDS),
        ap50=over_classes((0.5,)),
        ap75=over_classes((0.75,)),
        ap_small=over_classes(IOU_THRESHOLDS, "small"),
        ap_medium=over_classes(IOU_THRESHOLDS, "medium"),
        ap_large=over_classes(IOU_THRESHOLDS, "large"),
        per_class=per_class,
        num_images=len(records),
        num_gt=int(sum(r.gt_classes.size for r in records)),
        num_det=int(sum(r.det_scores.size for r in records)))


def evaluate_model(model: Model, scenes: list[SyntheticScene],
                   score_thresh: float = 0.05, topk: int = 100,
                   nms_iou: float = 0.5) -> EvalReport:
    per_image = []
    area = None
    for scene in scenes:
        dets = decode_detections(model, scene.image, score_thresh=score_thresh,
                                 topk=topk, nms_iou=nms_iou)
        per_image.append((dets, scene.masks, scene.classes))
        area = scene.image.size
    return evaluate_detections(per_image, float(area if area else 1))
