"""Detection scoring: IoU, NMS, greedy matching, AP/mAP and P/R/F1."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .dataset import Annotation, DatasetError, NormBox

COCO_IOUS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
RECALL_POINTS = np.linspace(0.0, 1.0, 101)


@dataclass(frozen=True)
class Detection:
    image_id: str
    class_id: int
    score: float
    box: NormBox

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")


@dataclass
class EvalReport:
    per_class_ap: dict[int, dict[str, float]]
    map50: float
    map75: float
    map5095: float
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int
    conf_thr: float = 0.25
    iou_thresholds: list[float] = field(default_factory=lambda: list(COCO_IOUS))
    interpolation: str = "coco101"

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["per_class_ap"] = {str(k): v for k, v in sorted(self.per_class_ap.items())}
        return doc


def iou(a: NormBox, b: NormBox) -> float:
    ax0, ay0, ax1, ay1 = a.corners()
    bx0, by0, bx1, by1 = b.corners()
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    inter = iw * ih if iw > 0 and ih > 0 else 0.0
    union = a.w * a.h + b.w * b.h - inter
    if union <= 0:
        return 0.0
    return min(1.0, max(0.0, inter / union))


def nms(dets: Sequence[Detection], iou_thr: float = 0.5) -> list[Detection]:
    """Greedy per-class suppression.

    Candidates are visited by descending score, ties by lower class id and
    then input order; a detection is dropped when it overlaps an already
    kept one of the same class by more than ``iou_thr``.
    """
    if len({d.image_id for d in dets}) > 1:
        raise ValueError("nms expects detections from a single image")
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, dets[i].class_id, i))
    kept: list[Detection] = []
    for i in order:
        d = dets[i]
        if all(k.class_id != d.class_id or iou(k.box, d.box) <= iou_thr for k in kept):
            kept.append(d)
    return kept


def match_detections(gt: Sequence[NormBox], dets: Sequence[Detection], iou_thr: float
                     ) -> tuple[list[bool], list[bool]]:
    """Score-ordered greedy matching for one image and one class.

    Returns ``(tp_flags, gt_matched)`` where ``tp_flags`` follows the input
    order of ``dets``.  Equal scores keep input order; equal IoUs go to the
    lower GT index.
    """
    order = sorted(range(len(dets)), key=lambda i: -dets[i].score)
    tp = [False] * len(dets)
    matched = [False] * len(gt)
    for i in order:
        best, best_iou = -1, -1.0
        for j, g in enumerate(gt):
            if matched[j]:
                continue
            v = iou(dets[i].box, g)
            if v >= iou_thr and v > best_iou:
                best, best_iou = j, v
        if best >= 0:
            matched[best] = True
            tp[i] = True
    return tp, matched


def average_precision(flags: Sequence[bool], gt_count: int, interpolation: str = "coco101") -> float | None:
    """AP of a score-ordered TP/FP sequence.

    Returns ``None`` when there is nothing to score (no GT, no detections),
    which callers treat as "exclude this class".
    """
    if gt_count < 0:
        raise ValueError("gt_count must be >= 0")
    if gt_count == 0:
        return None if len(flags) == 0 else 0.0
    if len(flags) == 0:
        return 0.0
    tp = np.cumsum(np.asarray(flags, dtype=np.float64))
    fp = np.cumsum(1.0 - np.asarray(flags, dtype=np.float64))
    recall = tp / gt_count
    precision = tp / (tp + fp)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    if interpolation == "coco101":
        idx = np.searchsorted(recall, RECALL_POINTS, side="left")
        samples = [float(envelope[i]) if i < len(envelope) else 0.0 for i in idx]
        return math.fsum(samples) / len(RECALL_POINTS)
    if interpolation == "allpoint":
        prev = np.concatenate(([0.0], recall[:-1]))
        return math.fsum((recall - prev) * envelope)
    raise ValueError(f"unknown interpolation {interpolation!r}")


def _mean(values: Sequence[float]) -> float:
    return math.fsum(values) / len(values) if values else 0.0


def _class_flags(gt: Mapping[str, Sequence[Annotation]], dets: Sequence[Detection], class_id: int,
                 iou_thr: float) -> tuple[list[bool], int]:
    """TP/FP flags for one class across all images, in global score order."""
    per_image: dict[str, list[tuple[int, Detection]]] = {}
    for k, d in enumerate(dets):
        if d.class_id == class_id:
            per_image.setdefault(d.image_id, []).append((k, d))
    gt_count = 0
    scored: list[tuple[float, int, bool]] = []
    for image_id, anns in gt.items():
        boxes = [a.box for a in anns if a.class_id == class_id]
        gt_count += len(boxes)
        entries = per_image.get(image_id, [])
        flags, _ = match_detections(boxes, [d for _, d in entries], iou_thr)
        scored.extend((d.score, k, f) for (k, d), f in zip(entries, flags))
    scored.sort(key=lambda t: (-t[0], t[1]))
    return [f for _, _, f in scored], gt_count


def _validate(gt: Mapping[str, Sequence[Annotation]], dets: Sequence[Detection], class_count: int | None):
    for d in dets:
        if d.image_id not in gt:
            raise DatasetError(f"detection references unknown image {d.image_id!r}")
        if class_count is not None and not 0 <= d.class_id < class_count:
            raise DatasetError(f"detection has unknown class id {d.class_id}")


def operating_point(gt: Mapping[str, Sequence[Annotation]], dets: Sequence[Detection], conf_thr: float,
                    iou_thr: float = 0.5) -> tuple[int, int, int]:
    """(tp, fp, fn) for detections scoring at least ``conf_thr``."""
    kept = [d for d in dets if d.score >= conf_thr]
    classes = sorted({a.class_id for anns in gt.values() for a in anns} | {d.class_id for d in kept})
    tp = fp = n_gt = 0
    for c in classes:
        flags, count = _class_flags(gt, kept, c, iou_thr)
        tp += sum(flags)
        fp += len(flags) - sum(flags)
        n_gt += count
    return tp, fp, n_gt - tp


def prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    p = tp / (tp + fp) if tp + fp > 0 else 0.0
    r = tp / (tp + fn) if tp + fn > 0 else 0.0
    f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return p, r, f1


def mean_ap(gt: Mapping[str, Sequence[Annotation]], dets: Sequence[Detection], iou_thr: float = 0.5,
            interpolation: str = "coco101") -> float:
    """Class-mean AP at one IoU threshold."""
    classes = sorted({a.class_id for anns in gt.values() for a in anns} | {d.class_id for d in dets})
    aps = [average_precision(*_class_flags(gt, dets, c, iou_thr), interpolation) for c in classes]
    return _mean([ap for ap in aps if ap is not None])


def evaluate(gt: Mapping[str, Sequence[Annotation]], dets: Sequence[Detection], conf_thr: float = 0.25,
             iou_thresholds: Sequence[float] = COCO_IOUS, class_count: int | None = None,
             interpolation: str = "coco101") -> EvalReport:
    """Score ``dets`` against ``gt`` (image id -> annotations).

    mAP is averaged over classes first and then over thresholds; a class
    with neither GT boxes nor detections does not count.  ``map50`` and
    ``map75`` are computed directly even when 0.5/0.75 are not in
    ``iou_thresholds``.  P/R/F1 use IoU 0.5 and scores >= ``conf_thr``.
    """
    _validate(gt, dets, class_count)
    classes = sorted({a.class_id for anns in gt.values() for a in anns} | {d.class_id for d in dets})
    thresholds = [float(t) for t in iou_thresholds]
    cache: dict[float, dict[int, float]] = {}

    def ap_at(t: float) -> dict[int, float]:
        if t not in cache:
            row = {}
            for c in classes:
                flags, count = _class_flags(gt, dets, c, t)
                ap = average_precision(flags, count, interpolation)
                if ap is not None:
                    row[c] = ap
            cache[t] = row
        return cache[t]

    def map_at(t: float) -> float:
        return _mean(list(ap_at(t).values()))

    per_class: dict[int, dict[str, float]] = {}
    for t in sorted(set(thresholds) | {0.5, 0.75}):
        for c, ap in ap_at(t).items():
            per_class.setdefault(c, {})[f"{t:.2f}"] = ap
    map5095 = _mean([map_at(t) for t in thresholds])
    tp, fp, fn = operating_point(gt, dets, conf_thr)
    p, r, f1 = prf(tp, fp, fn)
    return EvalReport(per_class, map_at(0.5), map_at(0.75), map5095, p, r, f1, tp, fp, fn,
                      conf_thr, thresholds, interpolation)


def confidence_sweep(gt: Mapping[str, Sequence[Annotation]], dets: Sequence[Detection],
                     thresholds: Iterable[float] | None = None, iou_thr: float = 0.5
                     ) -> list[tuple[float, float, float, float]]:
    """Rows of ``(threshold, precision, recall, f1)``."""
    if thresholds is None:
        thresholds = [round(0.01 * i, 2) for i in range(101)]
    rows = []
    for t in thresholds:
        p, r, f1 = prf(*operating_point(gt, dets, t, iou_thr))
        rows.append((float(t), p, r, f1))
    return rows


def parse_predictions(text: str) -> list[Detection]:
    """Lines of ``image_id class_id score cx cy w h``."""
    out = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        tokens = line.split()
        if not tokens:
            continue
        if len(tokens) != 7:
            raise DatasetError(f"predictions line {lineno}: expected 7 tokens, got {len(tokens)}")
        try:
            out.append(Detection(tokens[0], int(tokens[1]), float(tokens[2]),
                                 NormBox(*(float(t) for t in tokens[3:]))))
        except ValueError as exc:
            raise DatasetError(f"predictions line {lineno}: {exc}") from None
    return out


def format_predictions(dets: Iterable[Detection]) -> str:
    return "".join(f"{d.image_id} {d.class_id} {d.score:.6f} {d.box.cx:.6f} {d.box.cy:.6f} "
                   f"{d.box.w:.6f} {d.box.h:.6f}\n" for d in dets)


def parse_iou_range(spec: str) -> list[float]:
    """``"0.5:0.95:0.05"`` -> [0.5, 0.55, ..., 0.95]."""
    try:
        start, stop, step = (float(x) for x in spec.split(":"))
    except ValueError:
        raise ValueError(f"bad IoU range {spec!r}, expected start:stop:step") from None
    if step <= 0 or not 0 < start <= stop <= 1:
        raise ValueError(f"bad IoU range {spec!r}")
    n = int(round((stop - start) / step)) + 1
    return [round(start + i * step, 10) for i in range(n)]
