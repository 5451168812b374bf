"""Training objectives: focal classification, polar IoU regression,
centerness and box-membership cross-entropy, and the weighted total.

All logits stay raw; every log/exp goes through softplus so large
magnitudes cannot overflow. Targets arrive as plain numpy arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor


class NonPositiveRadius(ValueError):
    """Raised when radii handed to the polar IoU loss are not all positive."""


@dataclass(frozen=True)
class LossWeights:
    """Term weights and behaviour switches for the total objective.

    alpha scales the coarse regression term. implicit_coarse drops that
    term from the total so the coarse head trains only through the
    refinement pathway (its value is still reported). When
    centerness_weighted_regression is set, each positive location's
    regression loss is weighted by its centerness target.
    """

    alpha: float = 0.5
    focal_gamma: float = 2.0
    focal_balance: float = 0.25
    implicit_coarse: bool = False
    centerness_weighted_regression: bool = True


@dataclass
class LossBreakdown:
    """Raw per-term values plus the graph node for the weighted total.

    cls/centerness/coarse/fine/hbb are the unweighted term values;
    weighted_coarse is alpha * coarse (zero when the coarse term is
    implicit); total is their weighted sum as a float and total_tensor
    the scalar node to call backward on.
    """

    cls: float
    centerness: float
    coarse: float
    fine: float
    hbb: float
    weighted_coarse: float
    total: float
    total_tensor: Tensor

    def as_dict(self) -> dict[str, float]:
        return {"cls": self.cls, "cnt": self.centerness, "coarse": self.coarse,
                "fine": self.fine, "hbb": self.hbb, "total": self.total}


def focal_loss(logits: Tensor, classes: np.ndarray,
               gamma: float = 2.0, balance: float = 0.25) -> Tensor:
    """Sigmoid focal loss over (L, C) logits.

    classes holds the assigned class index per location, -1 for
    background. The sum is normalized by max(1, number of positives).
    """
    l, c = logits.data.shape
    classes = np.asarray(classes, dtype=np.int64)
    if classes.shape != (l,):
        raise ValueError(f"classes must be ({l},), got {classes.shape}")
    onehot = np.zeros((l, c))
    pos_rows = classes >= 0
    onehot[pos_rows, classes[pos_rows]] = 1.0
    num_pos = max(1, int(pos_rows.sum()))

    sp_x = dc.softplus(logits)            # -log(1 - p)
    sp_nx = dc.softplus(dc.neg(logits))   # -log p
    pos_term = dc.multiply(dc.exp(dc.mul_const(sp_x, -gamma)), sp_nx)
    neg_term = dc.multiply(dc.exp(dc.mul_const(sp_nx, -gamma)), sp_x)
    weighted = dc.add(dc.mul_const(pos_term, balance * onehot),
                      dc.mul_const(neg_term, (1.0 - balance) * (1.0 - onehot)))
    return dc.mul_const(dc.tsum(weighted), 1.0 / num_pos)


def polar_iou_loss(pred: Tensor, target: np.ndarray,
                   weights: np.ndarray | None = None) -> Tensor:
    """log(sum of ray-wise max / sum of ray-wise min) averaged over rows.

    pred is (P, n) predicted radii, target the matching ground truth.
    Optional per-row weights produce a weighted mean with normalizer
    sum(weights). All radii must be positive.
    """
    target = np.asarray(target, dtype=np.float64)
    if target.shape != pred.data.shape:
        raise ValueError(f"target shape {target.shape} vs pred {pred.data.shape}")
    if (target <= 0).any():
        raise NonPositiveRadius("target radii must be positive")
    if (pred.data <= 0).any():
        raise NonPositiveRadius("predicted radii must be positive")

    p = pred.data.shape[0]
    tgt = Tensor(target)
    upper = dc.tsum(dc.maximum(pred, tgt), axis=1)
    lower = dc.tsum(dc.minimum(pred, tgt), axis=1)
    per_row = dc.sub(dc.log(upper), dc.log(lower))
    if weights is None:
        return dc.mul_const(dc.tsum(per_row), 1.0 / p)
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (p,):
        raise ValueError(f"weights must be ({p},), got {weights.shape}")
    denom = max(float(weights.sum()), 1e-12)
    return dc.mul_const(dc.tsum(dc.mul_const(per_row, weights)), 1.0 / denom)


def binary_cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean of softplus(x) - t*x over all elements; targets in [0, 1]."""
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape != logits.data.shape:
        raise ValueError(f"targets shape {targets.shape} vs logits {logits.data.shape}")
    per = dc.sub(dc.softplus(logits), dc.mul_const(logits, targets))
    return dc.mul_const(dc.tsum(per), 1.0 / logits.data.size)


def centerness_bce(logits: Tensor, targets: np.ndarray) -> Tensor:
    return binary_cross_entropy(logits, targets)


def total_loss(cls_logits: Tensor, classes: np.ndarray,
               cnt_logits: Tensor | None, cnt_targets: np.ndarray,
               coarse_radii: Tensor | None, fine_radii: Tensor | None,
               radii_targets: np.ndarray,
               hbb_logits: Tensor | None, hbb_targets: np.ndarray | None,
               weights: LossWeights) -> LossBreakdown:
    """Assemble the full objective from head outputs and assigned targets.

    cnt_logits/cnt_targets, coarse_radii, and fine_radii cover only the
    positive locations, in enumeration order (None or empty when there
    are no positives, or when the stage is absent).
    """
    zero = Tensor(0.0)
    cls_term = focal_loss(cls_logits, classes,
                          gamma=weights.focal_gamma, balance=weights.focal_balance)
    cnt_term = centerness_bce(cnt_logits, cnt_targets) if cnt_logits is not None else zero

    reg_w = None
    if weights.centerness_weighted_regression:
        reg_w = np.asarray(cnt_targets, dtype=np.float64)

    have_pos = radii_targets.size > 0
    if coarse_radii is not None and have_pos:
        coarse_term = polar_iou_loss(coarse_radii, radii_targets, reg_w)
    else:
        coarse_term = zero
    if fine_radii is not None and have_pos:
        fine_term = polar_iou_loss(fine_radii, radii_targets, reg_w)
    else:
        fine_term = zero
    if hbb_logits is not None:
        if hbb_targets is None:
            raise ValueError("hbb logits given without targets")
        hbb_term = binary_cross_entropy(hbb_logits, hbb_targets)
    else:
        hbb_term = zero

    total = dc.add(cls_term, cnt_term)
    if coarse_term is not zero and not weights.implicit_coarse:
        total = dc.add(total, dc.mul_const(coarse_term, weights.alpha))
        weighted_coarse = weights.alpha * float(coarse_term.data)
    else:
        weighted_coarse = 0.0
    if fine_term is not zero:
        total = dc.add(total, fine_term)
    if hbb_term is not zero:
        total = dc.add(total, hbb_term)

    return LossBreakdown(
        cls=float(cls_term.data), centerness=float(cnt_term.data),
        coarse=float(coarse_term.data), fine=float(fine_term.data),
        hbb=float(hbb_term.data), weighted_coarse=weighted_coarse,
        total=float(total.data), total_tensor=total)
