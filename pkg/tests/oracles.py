"""Independent reference implementations used only by the tests.

Nothing here imports the code it checks: boxes are plain corner tuples and
matching is done by exhaustive enumeration.
"""
import math

import numpy as np


def corners(cx, cy, w, h):
    return (cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)


def box_iou(a, b):
    """IoU of two corner tuples via explicit overlap lengths."""
    ox = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    oy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ox * oy
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if union > 0 else 0.0


def _assignments(n_det, n_gt, valid):
    """Every partial injective map det -> gt restricted to ``valid`` pairs."""
    def rec(i, used):
        if i == n_det:
            yield ()
            return
        yield from ((None,) + rest for rest in rec(i + 1, used))
        for j in range(n_gt):
            if j not in used and valid[i][j]:
                yield from ((j,) + rest for rest in rec(i + 1, used | {j}))
    yield from rec(0, frozenset())


def exhaustive_match(gt_boxes, det_boxes, det_scores, thr):
    """TP flags (input order) of the lexicographically best matching when
    detections are ranked by score (ties: input order) and each is credited
    with the IoU of its GT (ties: lower GT index)."""
    order = sorted(range(len(det_boxes)), key=lambda i: (-det_scores[i], i))
    ious = [[box_iou(det_boxes[i], g) for g in gt_boxes] for i in order]
    valid = [[v >= thr for v in row] for row in ious]
    best_key, best = None, None
    for assign in _assignments(len(order), len(gt_boxes), valid):
        key = tuple((ious[k][j], -j) if j is not None else (-1.0, 0) for k, j in enumerate(assign))
        if best_key is None or key > best_key:
            best_key, best = key, assign
    flags = [False] * len(det_boxes)
    for k, j in enumerate(best):
        flags[order[k]] = j is not None
    return flags


def ap101(flags, gt_count):
    """101-point interpolated AP written out with plain loops."""
    if gt_count == 0:
        return None if not flags else 0.0
    tp = fp = 0
    recalls, precisions = [], []
    for f in flags:
        tp += f
        fp += not f
        recalls.append(tp / gt_count)
        precisions.append(tp / (tp + fp))
    samples = []
    for k in range(101):
        r = k / 100
        best = 0.0
        for rec, prec in zip(recalls, precisions):
            if rec >= r and prec > best:
                best = prec
        samples.append(best)
    return math.fsum(samples) / 101


def brute_force_map(gt, dets, thr):
    """``gt``: {image: [(cls, cx, cy, w, h)]}; ``dets``: [(image, cls, score, cx, cy, w, h)]."""
    classes = sorted({g[0] for boxes in gt.values() for g in boxes} | {d[1] for d in dets})
    aps = []
    for c in classes:
        ranked = []
        n_gt = 0
        for image, boxes in gt.items():
            g_boxes = [corners(*g[1:]) for g in boxes if g[0] == c]
            n_gt += len(g_boxes)
            idx = [k for k, d in enumerate(dets) if d[0] == image and d[1] == c]
            flags = exhaustive_match(g_boxes, [corners(*dets[k][3:]) for k in idx],
                                     [dets[k][2] for k in idx], thr)
            ranked.extend((dets[k][2], k, f) for k, f in zip(idx, flags))
        ranked.sort(key=lambda t: (-t[0], t[1]))
        ap = ap101([f for _, _, f in ranked], n_gt)
        if ap is not None:
            aps.append(ap)
    return math.fsum(aps) / len(aps) if aps else 0.0


def brute_force_map5095(gt, dets):
    thresholds = [round(0.5 + 0.05 * i, 2) for i in range(10)]
    return math.fsum(brute_force_map(gt, dets, t) for t in thresholds) / len(thresholds)


def central_diff(f, x, h=1e-6):
    """Gradient of scalar ``f`` at ``x`` by central differences, one
    coordinate at a time.  ``x`` is a flat float64 array and is restored."""
    g = [0.0] * len(x)
    for i in range(len(x)):
        old = x[i]
        x[i] = old + h
        up = f(x)
        x[i] = old - h
        down = f(x)
        x[i] = old
        g[i] = (up - down) / (2 * h)
    return g


def corner_oracle(box, t):
    """Map all four corners through the forward affine matrix, take the
    bounding box, clip to the unit square."""
    flip = np.array([[-1, 0, 1], [0, 1, 0], [0, 0, 1]]) if t.hflip else np.eye(3)
    to_c = np.array([[1, 0, -0.5], [0, 1, -0.5], [0, 0, 1]])
    sc = np.diag([t.scale, t.scale, 1.0])
    back = np.array([[1, 0, 0.5 + t.translate[0]], [0, 1, 0.5 + t.translate[1]], [0, 0, 1]])
    m = back @ sc @ to_c @ flip
    x0, y0, x1, y1 = box.cx - box.w / 2, box.cy - box.h / 2, box.cx + box.w / 2, box.cy + box.h / 2
    pts = m @ np.array([[x0, x1, x0, x1], [y0, y0, y1, y1], [1, 1, 1, 1]])
    lo, hi = pts[:2].min(axis=1), pts[:2].max(axis=1)
    area = np.prod(hi - lo)
    clo, chi = np.clip(lo, 0, 1), np.clip(hi, 0, 1)
    if np.any(chi <= clo) or np.prod(chi - clo) < 0.25 * area:
        return None
    return np.concatenate([clo, chi])
