"""Detection losses (focal, L1, GIoU), their analytic gradients, set matching
and a finite-difference gradient checker.

Boxes passed to :func:`iou` / :func:`giou` are ``x1, y1, x2, y2``; box sets
passed to the set losses are normalized ``cx, cy, w, h``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import linear_sum_assignment

from .box_diffusion import cxcywh_to_xyxy
from .errors import CountMismatch, DegenerateBox, NonFiniteGradient, ShapeMismatch

PROB_EPS = 1e-7


@dataclass(frozen=True)
class LossWeights:
    cls: float = 2.0  # lambda1
    reg: float = 1.0  # lambda2
    l1: float = 5.0  # lambda3
    giou: float = 2.0  # lambda4
    gamma: float = 2.0

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not (np.isfinite(value) and value >= 0):
                raise ValueError(f"loss weight {name}={value} must be finite and >= 0")


@dataclass
class MatchResult:
    pairs: list[tuple[int, int]]  # (prediction, gt), sorted by prediction
    unmatched_predictions: list[int] = field(default_factory=list)


# -- IoU / GIoU -------------------------------------------------------------


def _area(b) -> float:
    return (b[2] - b[0]) * (b[3] - b[1])


def _overlap_terms(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    area_a, area_b = _area(a), _area(b)
    if area_a <= 0.0 and area_b <= 0.0:
        raise DegenerateBox("both boxes have zero area")
    iw = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    ih = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = iw * ih
    union = area_a + area_b - inter
    hull = (max(a[2], b[2]) - min(a[0], b[0])) * (max(a[3], b[3]) - min(a[1], b[1]))
    return inter, union, hull


def iou(a, b) -> float:
    inter, union, _ = _overlap_terms(a, b)
    return inter / union


def giou(a, b) -> float:
    inter, union, hull = _overlap_terms(a, b)
    # containment makes hull == union up to rounding; keep giou <= iou
    return inter / union - max(hull - union, 0.0) / hull


def giou_grad(a, b) -> np.ndarray:
    """d giou(a, b) / d a for ``a = (x1, y1, x2, y2)``.

    One-sided choices at ties (equal edges) follow the branch ``max``/``min``
    take in :func:`giou`; the checker samples away from those kinks.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    inter, union, hull = _overlap_terms(a, b)
    wa, ha = a[2] - a[0], a[3] - a[1]

    # intersection extents and their sensitivity to each coordinate of a
    ix1_a, iy1_a = a[0] >= b[0], a[1] >= b[1]
    ix2_a, iy2_a = a[2] <= b[2], a[3] <= b[3]
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    d_iw = np.array([-1.0 * ix1_a, 0.0, 1.0 * ix2_a, 0.0])
    d_ih = np.array([0.0, -1.0 * iy1_a, 0.0, 1.0 * iy2_a])
    if iw > 0 and ih > 0:
        d_inter = d_iw * ih + d_ih * iw
    else:
        d_inter = np.zeros(4)

    d_area_a = np.array([-ha, -wa, ha, wa])
    d_union = d_area_a - d_inter

    cw = max(a[2], b[2]) - min(a[0], b[0])
    ch = max(a[3], b[3]) - min(a[1], b[1])
    d_cw = np.array([-1.0 * (a[0] <= b[0]), 0.0, 1.0 * (a[2] >= b[2]), 0.0])
    d_ch = np.array([0.0, -1.0 * (a[1] <= b[1]), 0.0, 1.0 * (a[3] >= b[3])])
    d_hull = d_cw * ch + d_ch * cw

    # giou = I/U - 1 + U/C
    return d_inter / union - inter * d_union / union**2 + d_union / hull - union * d_hull / hull**2


def pairwise_iou_giou(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """IoU and GIoU matrices between xyxy box arrays (P, 4) and (G, 4)."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)[:, None, :]
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)[None, :, :]
    area_a = (a[..., 2] - a[..., 0]) * (a[..., 3] - a[..., 1])
    area_b = (b[..., 2] - b[..., 0]) * (b[..., 3] - b[..., 1])
    iw = np.clip(np.minimum(a[..., 2], b[..., 2]) - np.maximum(a[..., 0], b[..., 0]), 0, None)
    ih = np.clip(np.minimum(a[..., 3], b[..., 3]) - np.maximum(a[..., 1], b[..., 1]), 0, None)
    inter = iw * ih
    union = area_a + area_b - inter
    hull = (np.maximum(a[..., 2], b[..., 2]) - np.minimum(a[..., 0], b[..., 0])) * (
        np.maximum(a[..., 3], b[..., 3]) - np.minimum(a[..., 1], b[..., 1])
    )
    with np.errstate(divide="ignore", invalid="ignore"):
        ious = np.where(union > 0, inter / union, 0.0)
        gious = np.where(hull > 0, ious - np.maximum(hull - union, 0.0) / hull, 0.0)
    return ious, gious


# -- focal / L1 -------------------------------------------------------------


def focal_loss(v, v_hat, gamma: float = 2.0) -> float:
    v = np.asarray(v, dtype=np.float64)
    p = np.asarray(v_hat, dtype=np.float64)
    if v.shape != p.shape:
        raise ShapeMismatch(f"labels {v.shape} vs predictions {p.shape}")
    p = np.clip(p, PROB_EPS, 1.0 - PROB_EPS)
    pos = v * (1.0 - p) ** gamma * np.log(p)
    neg = (1.0 - v) * p**gamma * np.log(1.0 - p)
    return float(-np.sum(pos + neg))


def focal_grad(v, v_hat, gamma: float = 2.0) -> np.ndarray:
    """d focal_loss / d v_hat (zero where the clamp is active)."""
    v = np.asarray(v, dtype=np.float64)
    p_raw = np.asarray(v_hat, dtype=np.float64)
    p = np.clip(p_raw, PROB_EPS, 1.0 - PROB_EPS)
    q = 1.0 - p
    d_pos = -gamma * q ** (gamma - 1) * np.log(p) + q**gamma / p if gamma else 1.0 / p
    d_neg = gamma * p ** (gamma - 1) * np.log(q) - p**gamma / q if gamma else -1.0 / q
    g = -(v * d_pos + (1.0 - v) * d_neg)
    return np.where((p_raw > PROB_EPS) & (p_raw < 1.0 - PROB_EPS), g, 0.0)


def l1_loss(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise CountMismatch(f"box sets {a.shape} and {b.shape} differ")
    if a.size == 0:
        return 0.0
    return float(np.mean(np.abs(a - b)))


def l1_grad(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.sign(a - b) / a.size


# -- matching ---------------------------------------------------------------


def _one_hot(labels: np.ndarray, n_classes: int) -> np.ndarray:
    out = np.zeros((len(labels), n_classes))
    out[np.arange(len(labels)), labels] = 1.0
    return out


def matching_cost(
    pred_boxes: np.ndarray,
    pred_scores: np.ndarray,
    gt_boxes: np.ndarray,
    gt_labels: np.ndarray,
    weights: LossWeights = LossWeights(),
) -> np.ndarray:
    """Pairwise cost ``2 focal + 5 L1 + 2 (1 - giou)`` (weights from ``weights``)."""
    pred_boxes = np.asarray(pred_boxes, dtype=np.float64).reshape(-1, 4)
    gt_boxes = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    pred_scores = np.asarray(pred_scores, dtype=np.float64)
    gt_labels = np.asarray(gt_labels, dtype=np.intp)
    targets = _one_hot(gt_labels, pred_scores.shape[1])
    p = np.clip(pred_scores, PROB_EPS, 1.0 - PROB_EPS)[:, None, :]
    t = targets[None, :, :]
    g = weights.gamma
    focal = -np.sum(t * (1 - p) ** g * np.log(p) + (1 - t) * p**g * np.log(1 - p), axis=-1)
    l1 = np.mean(np.abs(pred_boxes[:, None, :] - gt_boxes[None, :, :]), axis=-1)
    _, gious = pairwise_iou_giou(cxcywh_to_xyxy(pred_boxes), cxcywh_to_xyxy(gt_boxes))
    return weights.cls * focal + weights.l1 * l1 + weights.giou * (1.0 - gious)


def match_hungarian(cost: np.ndarray) -> MatchResult:
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ShapeMismatch(f"cost must be a matrix, got shape {cost.shape}")
    rows, cols = linear_sum_assignment(cost)
    pairs = sorted(zip(rows.tolist(), cols.tolist()))
    matched = {r for r, _ in pairs}
    return MatchResult(pairs, [i for i in range(cost.shape[0]) if i not in matched])


def assignment_cost(cost: np.ndarray, pairs) -> float:
    """Correctly rounded sum, so equal pair sets give bit-equal totals."""
    return math.fsum(float(cost[i, j]) for i, j in pairs)


# -- total ------------------------------------------------------------------


@dataclass
class LossBreakdown:
    cls: float
    l1: float
    giou: float
    total: float
    matches: list[tuple[int, int]]

    def to_json(self) -> str:
        return json.dumps({"cls": self.cls, "l1": self.l1, "giou": self.giou, "total": self.total, "matches": self.matches})


def total_loss(
    pred_boxes: np.ndarray,
    pred_scores: np.ndarray,
    gt_boxes: np.ndarray,
    gt_labels: np.ndarray,
    match: MatchResult,
    weights: LossWeights = LossWeights(),
) -> LossBreakdown:
    """``cls * L_cls + reg * (l1 * L_L1 + giou * L_GIoU)``.

    L_cls is the focal loss summed over every prediction and class, with
    unmatched predictions scored against the all-zero background label.
    L_L1 and L_GIoU (``1 - giou``) average over matched pairs only.
    """
    pred_boxes = np.asarray(pred_boxes, dtype=np.float64).reshape(-1, 4)
    pred_scores = np.asarray(pred_scores, dtype=np.float64)
    gt_boxes = np.asarray(gt_boxes, dtype=np.float64).reshape(-1, 4)
    gt_labels = np.asarray(gt_labels, dtype=np.intp)
    if pred_scores.shape[0] != pred_boxes.shape[0]:
        raise CountMismatch(f"{len(pred_boxes)} boxes but {len(pred_scores)} score rows")

    targets = np.zeros_like(pred_scores)
    for i, j in match.pairs:
        targets[i, gt_labels[j]] = 1.0
    l_cls = focal_loss(targets, pred_scores, weights.gamma)

    if match.pairs:
        pi = [i for i, _ in match.pairs]
        gj = [j for _, j in match.pairs]
        l_l1 = l1_loss(pred_boxes[pi], gt_boxes[gj])
        pa, ga = cxcywh_to_xyxy(pred_boxes[pi]), cxcywh_to_xyxy(gt_boxes[gj])
        l_giou = float(np.mean([1.0 - giou(x, y) for x, y in zip(pa, ga)]))
    else:
        l_l1 = l_giou = 0.0
    total = weights.cls * l_cls + weights.reg * (weights.l1 * l_l1 + weights.giou * l_giou)
    return LossBreakdown(l_cls, l_l1, l_giou, total, list(match.pairs))


# -- gradient checking ------------------------------------------------------


def grad_check(
    loss: Callable[[np.ndarray], float],
    x: np.ndarray,
    analytic_grad: np.ndarray,
    h: float = 1e-5,
) -> float:
    """Max relative error ``|g_fd - g_an| / max(|g_fd|, |g_an|)`` over coordinates.

    ``g_fd`` uses central differences with step ``h``; coordinates where both
    gradients are exactly zero count as agreeing.
    """
    x = np.array(x, dtype=np.float64)
    g_an = np.asarray(analytic_grad, dtype=np.float64).reshape(x.shape)
    g_fd = np.empty_like(x)
    for idx in np.ndindex(x.shape):
        xp = x.copy()
        xm = x.copy()
        xp[idx] += h
        xm[idx] -= h
        g_fd[idx] = (loss(xp) - loss(xm)) / (2 * h)
    if not (np.isfinite(g_fd).all() and np.isfinite(g_an).all()):
        raise NonFiniteGradient("gradient has non-finite entries")
    scale = np.maximum(np.abs(g_fd), np.abs(g_an))
    err = np.divide(np.abs(g_fd - g_an), scale, out=np.zeros_like(scale), where=scale > 0)
    return float(np.max(err, initial=0.0))
