"""COCO-style average precision over KITTI categories.

Ten IoU thresholds 0.50:0.05:0.95, 101-point interpolated precision, and
small/medium/large buckets split at 32^2 and 96^2 pixels of box area.
Means are taken with ``math.fsum`` so they do not depend on summation order.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidDetection
from .kitti_io import Category, LabelRecord
from .losses_matching import pairwise_iou_giou

IOU_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
RECALL_POINTS = np.arange(101) / 100
AREA_RANGES = {
    "all": (0.0, math.inf),
    "small": (0.0, 32.0**2),
    "medium": (32.0**2, 96.0**2),
    "large": (96.0**2, math.inf),
}


@dataclass(frozen=True)
class Detection:
    image_id: str
    category: Category
    bbox: tuple[float, float, float, float]  # x1, y1, x2, y2 pixels
    score: float

    def __post_init__(self):
        cat = self.category if isinstance(self.category, Category) else Category.parse(str(self.category))
        object.__setattr__(self, "category", cat)
        bbox = tuple(float(v) for v in self.bbox)
        if len(bbox) != 4 or not all(math.isfinite(v) for v in bbox):
            raise InvalidDetection(f"bad bbox {self.bbox!r}")
        if bbox[0] > bbox[2] or bbox[1] > bbox[3]:
            raise InvalidDetection(f"bbox corners out of order: {bbox}")
        object.__setattr__(self, "bbox", bbox)
        if not (math.isfinite(self.score) and 0.0 <= self.score <= 1.0):
            raise InvalidDetection(f"score {self.score} outside [0, 1]")


@dataclass(frozen=True)
class GroundTruth:
    image_id: str
    category: Category
    bbox: tuple[float, float, float, float]

    def __post_init__(self):
        if not isinstance(self.category, Category):
            object.__setattr__(self, "category", Category.parse(str(self.category)))
        object.__setattr__(self, "bbox", tuple(float(v) for v in self.bbox))

    @classmethod
    def from_label(cls, image_id: str, rec: LabelRecord) -> "GroundTruth":
        return cls(image_id, rec.category, rec.bbox)

    @property
    def area(self) -> float:
        return (self.bbox[2] - self.bbox[0]) * (self.bbox[3] - self.bbox[1])


@dataclass
class EvalReport:
    ap: float | None
    ap50: float | None
    ap75: float | None
    ap_s: float | None
    ap_m: float | None
    ap_l: float | None
    per_category: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "ap": self.ap,
            "ap50": self.ap50,
            "ap75": self.ap75,
            "ap_s": self.ap_s,
            "ap_m": self.ap_m,
            "ap_l": self.ap_l,
            "per_category": self.per_category,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _as_ground_truths(gts) -> list[GroundTruth]:
    out = []
    for g in gts:
        if isinstance(g, GroundTruth):
            out.append(g)
        else:
            image_id, rec = g
            out.append(GroundTruth.from_label(image_id, rec))
    return out


def _interpolated_ap(tp: np.ndarray, n_gt: int) -> float:
    """101-point AP from a score-ordered TP/FP sequence (ignored entries removed)."""
    if len(tp) == 0:
        return 0.0
    ctp = np.cumsum(tp)
    cfp = np.cumsum(1 - tp)
    recall = ctp / n_gt
    precision = ctp / (ctp + cfp)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_POINTS, side="left")
    sampled = [float(envelope[i]) if i < len(envelope) else 0.0 for i in idx]
    return math.fsum(sampled) / len(RECALL_POINTS)


def _category_ap(
    dets: Sequence[Detection],
    gts: Sequence[GroundTruth],
    threshold: float,
    area_range: tuple[float, float],
) -> float | None:
    """AP for one category at one IoU threshold; None when no gt is in range."""
    lo, hi = area_range
    gt_by_image: dict[str, list[GroundTruth]] = {}
    for g in gts:
        gt_by_image.setdefault(g.image_id, []).append(g)
    n_gt = sum(1 for g in gts if lo <= g.area < hi)
    if n_gt == 0:
        return None

    order = sorted(range(len(dets)), key=lambda i: -dets[i].score)  # stable
    ious_by_image = {}
    taken = {img: np.zeros(len(v), dtype=bool) for img, v in gt_by_image.items()}
    ignore_gt = {img: np.array([not (lo <= g.area < hi) for g in v]) for img, v in gt_by_image.items()}
    tp = []
    for i in order:
        d = dets[i]
        img_gts = gt_by_image.get(d.image_id, [])
        best = -1
        if img_gts:
            if d.image_id not in ious_by_image:
                boxes = np.array([g.bbox for g in img_gts])
                ious_by_image[d.image_id] = boxes
            ious, _ = pairwise_iou_giou(np.array([d.bbox]), ious_by_image[d.image_id])
            ious = ious[0]
            free = ~taken[d.image_id]
            # prefer in-range gts; fall back to ignored ones (COCO behaviour)
            for pool in (free & ~ignore_gt[d.image_id], free & ignore_gt[d.image_id]):
                cand = np.where(pool & (ious >= threshold))[0]
                if len(cand):
                    best = int(cand[np.argmax(ious[cand])])
                    break
        if best >= 0:
            taken[d.image_id][best] = True
            if ignore_gt[d.image_id][best]:
                continue
            tp.append(1)
        else:
            area = (d.bbox[2] - d.bbox[0]) * (d.bbox[3] - d.bbox[1])
            if not lo <= area < hi:
                continue
            tp.append(0)
    return _interpolated_ap(np.array(tp, dtype=np.int64), n_gt)


def _mean(values: Iterable[float | None]) -> float | None:
    vals = [v for v in values if v is not None]
    if not vals:
        return None
    return math.fsum(vals) / len(vals)


def _split(dets, gts, dontcare_as_category: bool):
    gts = _as_ground_truths(gts)
    if not dontcare_as_category:
        gts = [g for g in gts if g.category is not Category.DontCare]
        dets = [d for d in dets if d.category is not Category.DontCare]
    cats = [c for c in Category if any(g.category is c for g in gts)]
    by_cat = {c: ([d for d in dets if d.category is c], [g for g in gts if g.category is c]) for c in cats}
    return by_cat


def _ap_table(by_cat, area: str) -> dict[Category, list[float | None]]:
    return {
        c: [_category_ap(d, g, t, AREA_RANGES[area]) for t in IOU_THRESHOLDS] for c, (d, g) in by_cat.items()
    }


def evaluate(
    dets: Sequence[Detection],
    gts: Sequence,
    dontcare_as_category: bool = False,
) -> EvalReport:
    """Evaluate detections against ground truth.

    ``gts`` holds :class:`GroundTruth` objects or ``(image_id, LabelRecord)``
    pairs.  DontCare boxes are dropped from both sides unless
    ``dontcare_as_category`` is set.  Undefined metrics are ``None``.
    """
    by_cat = _split(dets, gts, dontcare_as_category)
    table = _ap_table(by_cat, "all")
    per_category = {c.value: _mean(row) for c, row in table.items()}

    def at(thr_index):
        return _mean(row[thr_index] for row in table.values())

    def bucket(area):
        rows = _ap_table(by_cat, area)
        return _mean(_mean(row) for row in rows.values())

    return EvalReport(
        ap=_mean(per_category.values()),
        ap50=at(IOU_THRESHOLDS.index(0.5)),
        ap75=at(IOU_THRESHOLDS.index(0.75)),
        ap_s=bucket("small"),
        ap_m=bucket("medium"),
        ap_l=bucket("large"),
        per_category=per_category,
    )


def evaluate_per_category(dets, gts, dontcare_as_category: bool = False) -> dict[str, float]:
    by_cat = _split(dets, gts, dontcare_as_category)
    return {c.value: _mean(row) for c, row in _ap_table(by_cat, "all").items()}


def read_detections(data: bytes) -> list[Detection]:
    """Parse line-delimited JSON ``{image_id, category, bbox, score}`` records."""
    dets = []
    for lineno, line in enumerate(bytes(data).decode("utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            dets.append(Detection(str(rec["image_id"]), rec["category"], tuple(rec["bbox"]), float(rec["score"])))
        except (KeyError, TypeError, json.JSONDecodeError) as exc:
            raise InvalidDetection(f"line {lineno}: {exc}") from None
    return dets
