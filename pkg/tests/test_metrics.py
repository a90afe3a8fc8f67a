import random

import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from dune_detect.dataset import Annotation, DatasetError, NormBox
from dune_detect.metrics import (
    Detection,
    average_precision,
    confidence_sweep,
    evaluate,
    format_predictions,
    iou,
    match_detections,
    nms,
    parse_iou_range,
    parse_predictions,
)

import oracles


def det(box, score=0.9, cls=0, image="a"):
    return Detection(image, cls, score, box)


def test_iou_basic_cases():
    a = NormBox(0.25, 0.25, 0.5, 0.5)
    assert iou(a, a) == 1.0
    assert iou(a, NormBox(0.8, 0.8, 0.1, 0.1)) == 0.0
    # inter 0.25*0.5 = 0.125, union 0.25 + 0.25 - 0.125 = 0.375
    assert iou(a, NormBox(0.5, 0.25, 0.5, 0.5)) == pytest.approx(1 / 3, abs=1e-15)


boxes = st.builds(NormBox, st.floats(0, 1), st.floats(0, 1), st.floats(0.001, 1), st.floats(0.001, 1))


@given(boxes, boxes)
def test_iou_symmetric_and_bounded(a, b):
    assert iou(a, b) == iou(b, a)
    assert 0.0 <= iou(a, b) <= 1.0
    assert iou(a, a) == pytest.approx(1.0, abs=1e-12)


@given(boxes, boxes, st.floats(0.25, 4.0))
def test_iou_scale_invariant(a, b, s):
    sa = NormBox(a.cx * s, a.cy * s, a.w * s, a.h * s)
    sb = NormBox(b.cx * s, b.cy * s, b.w * s, b.h * s)
    assert iou(sa, sb) == pytest.approx(iou(a, b), abs=1e-12)


def test_nms_examples():
    b = NormBox(0.5, 0.5, 0.2, 0.2)
    assert nms([det(b)], 0.5) == [det(b)]
    assert nms([det(b, 0.8), det(b, 0.9)], 0.5) == [det(b, 0.9)]
    assert len(nms([det(b, 0.9, 0), det(b, 0.8, 1)], 0.5)) == 2


def test_nms_tie_break_and_order():
    b = NormBox(0.5, 0.5, 0.2, 0.2)
    far = NormBox(0.1, 0.1, 0.1, 0.1)
    out = nms([det(far, 0.3), det(b, 0.7, 1), det(b, 0.7, 0)], 0.5)
    assert [(d.class_id, d.score) for d in out] == [(0, 0.7), (1, 0.7), (0, 0.3)]


def test_match_examples():
    g = NormBox(0.5, 0.5, 0.2, 0.2)
    # shifted so IoU is 0.6: overlap width w satisfies w/(0.4 - w) = 0.6
    w = 0.15
    shifted = NormBox(0.5 + (0.2 - w), 0.5, 0.2, 0.2)
    assert iou(g, shifted) == pytest.approx(0.6)
    assert match_detections([g], [det(shifted)], 0.5) == ([True], [True])
    tp, matched = match_detections([g], [det(shifted, 0.4), det(g, 0.8)], 0.5)
    assert tp == [False, True] and matched == [True]


def test_match_against_exhaustive_oracle():
    rng = random.Random(11)
    for _ in range(300):
        gts = [NormBox(rng.uniform(.2, .8), rng.uniform(.2, .8), rng.uniform(.1, .4), rng.uniform(.1, .4))
               for _ in range(3)]
        ds = [det(NormBox(g.cx + rng.gauss(0, .05), g.cy + rng.gauss(0, .05), g.w, g.h), round(rng.random(), 1))
              for g in gts]
        rng.shuffle(ds)
        flags, _ = match_detections(gts, ds, 0.5)
        expected = oracles.exhaustive_match([g.corners() for g in gts], [d.box.corners() for d in ds],
                                            [d.score for d in ds], 0.5)
        assert flags == expected


def test_ap_hand_cases():
    assert average_precision([True], 1) == 1.0
    # precision envelope is 0.5 at every recall point
    assert average_precision([False, True], 1) == 0.5
    assert average_precision([True, True], 2) == 1.0
    # recall 0.5 reached at precision 1; recall 1 at precision 2/3
    # 51 points at 1.0 and 50 at 2/3
    assert average_precision([True, False, True], 2) == pytest.approx((51 + 50 * 2 / 3) / 101, abs=1e-15)


def test_ap_edge_cases():
    assert average_precision([], 0) is None
    assert average_precision([False], 0) == 0.0
    assert average_precision([], 3) == 0.0


def test_ap_allpoint():
    assert average_precision([False, True], 1, "allpoint") == 0.5
    assert average_precision([True, False, True], 2, "allpoint") == pytest.approx(0.5 + 0.5 * 2 / 3)


@given(st.lists(st.booleans(), min_size=2, max_size=30), st.data())
def test_ap_improves_when_tp_moves_ahead(flags, data):
    swaps = [i for i in range(len(flags) - 1) if not flags[i] and flags[i + 1]]
    assume(swaps)
    i = data.draw(st.sampled_from(swaps))
    better = list(flags)
    better[i], better[i + 1] = True, False
    n = sum(flags) + data.draw(st.integers(0, 3))
    assert average_precision(better, n) >= average_precision(flags, n)


def _synthetic_case(rng, n_images=2, max_boxes=5, classes=3):
    gt, dets = {}, []
    for k in range(n_images):
        image = f"im{k}"
        gt[image] = []
        for _ in range(rng.randint(0, max_boxes)):
            gt[image].append((rng.randrange(classes), rng.uniform(.2, .8), rng.uniform(.2, .8),
                              rng.uniform(.05, .4), rng.uniform(.05, .4)))
        for _ in range(rng.randint(0, max_boxes)):
            if gt[image] and rng.random() < 0.7:
                c, cx, cy, w, h = rng.choice(gt[image])
                c = c if rng.random() < 0.85 else rng.randrange(classes)
                cx, cy = cx + rng.gauss(0, 0.03), cy + rng.gauss(0, 0.03)
                w, h = w * rng.uniform(0.8, 1.2), h * rng.uniform(0.8, 1.2)
            else:
                c, cx, cy = rng.randrange(classes), rng.uniform(.1, .9), rng.uniform(.1, .9)
                w, h = rng.uniform(.05, .4), rng.uniform(.05, .4)
            dets.append((image, c, round(rng.random(), 2), cx, cy, w, h))
    return gt, dets


def _to_api(gt, dets):
    g = {k: [Annotation(c, NormBox(*b)) for c, *b in v] for k, v in gt.items()}
    d = [Detection(i, c, s, NormBox(*b)) for i, c, s, *b in dets]
    return g, d


def test_evaluate_oracle_predictions():
    gt = {"a": [Annotation(0, NormBox(.3, .3, .2, .2)), Annotation(2, NormBox(.7, .7, .1, .3))], "b": []}
    dets = [Detection(k, a.class_id, 1.0, a.box) for k, v in gt.items() for a in v]
    r = evaluate(gt, dets)
    assert r.map50 == r.map75 == r.map5095 == 1.0
    assert (r.precision, r.recall, r.f1) == (1.0, 1.0, 1.0)
    assert (r.tp, r.fp, r.fn) == (2, 0, 0)


def test_evaluate_no_detections():
    gt = {"a": [Annotation(0, NormBox(.3, .3, .2, .2))]}
    r = evaluate(gt, [])
    assert (r.map50, r.map5095, r.precision, r.recall, r.f1) == (0, 0, 0, 0, 0)
    assert r.fn == 1


def test_evaluate_five_box_case_matches_brute_force():
    rng = random.Random(5)
    gt, dets = _synthetic_case(rng, n_images=1)
    while len(gt["im0"]) < 5 or len(dets) < 5:
        gt, dets = _synthetic_case(rng, n_images=1)
    r = evaluate(*_to_api(gt, dets))
    assert r.map50 == oracles.brute_force_map(gt, dets, 0.5)
    assert r.map5095 == oracles.brute_force_map5095(gt, dets)


def test_score_scale_invariance():
    rng = random.Random(9)
    for _ in range(50):
        gt, dets = _synthetic_case(rng)
        g, d = _to_api(gt, dets)
        scaled = [Detection(x.image_id, x.class_id, x.score * 0.37, x.box) for x in d]
        a, b = evaluate(g, d, conf_thr=0.0), evaluate(g, scaled, conf_thr=0.0)
        assert (a.map50, a.map75, a.map5095) == (b.map50, b.map75, b.map5095)


def test_evaluate_rejects_unknown_ids():
    gt = {"a": []}
    with pytest.raises(DatasetError, match="unknown image"):
        evaluate(gt, [det(NormBox(.5, .5, .1, .1), image="zz")])
    with pytest.raises(DatasetError, match="unknown class"):
        evaluate(gt, [det(NormBox(.5, .5, .1, .1), cls=7)], class_count=3)


def test_f1_relation_and_sweep():
    rng = random.Random(2)
    gt, dets = _synthetic_case(rng, n_images=4)
    g, d = _to_api(gt, dets)
    r = evaluate(g, d)
    if r.precision + r.recall > 0:
        assert r.f1 == pytest.approx(2 * r.precision * r.recall / (r.precision + r.recall))
    rows = confidence_sweep(g, d)
    assert len(rows) == 101 and rows[0][0] == 0.0 and rows[-1][0] == 1.0
    recalls = [row[2] for row in rows]
    assert all(a >= b for a, b in zip(recalls, recalls[1:]))


def test_predictions_round_trip():
    d = [Detection("x", 1, 0.5, NormBox(0.25, 0.5, 0.125, 0.25))]
    assert parse_predictions(format_predictions(d)) == d
    with pytest.raises(DatasetError):
        parse_predictions("x 1 0.5 0.1")


def test_iou_range():
    assert parse_iou_range("0.5:0.95:0.05") == [0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95]
    with pytest.raises(ValueError):
        parse_iou_range("0.5:0.95")
