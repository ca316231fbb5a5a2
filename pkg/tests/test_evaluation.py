import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from transferdet.boxes import BoxAnnotation, Detection, iou, nms
from transferdet.data import SyntheticSceneSpec, generate_scenes
from transferdet.errors import DataError
from transferdet.evaluation import (compute_pr_and_ap, evaluate, evaluate_detections, match_detections,
                                    probability_gap_analysis, report_tables, write_report)
from transferdet.netconfig import default_backbone
from transferdet.network import build_network

from helpers import (_corner_iou, brute_force_ap, random_detections, random_truths, raster_iou,
                     reference_nms, replay_match)


# IoU -----------------------------------------------------------------------------

def test_iou_examples():
    assert iou((0.5, 0.5, 0.2, 0.3), (0.5, 0.5, 0.2, 0.3)) == 1.0
    assert iou((0.2, 0.2, 0.1, 0.1), (0.8, 0.8, 0.1, 0.1)) == 0.0
    assert iou((1, 1, 2, 2), (2, 2, 2, 2)) == pytest.approx(1 / 7, abs=1e-12)
    # same pair scaled into the unit square, against the raster count
    assert raster_iou((1 / 3, 1 / 3, 2 / 3, 2 / 3), (2 / 3, 2 / 3, 2 / 3, 2 / 3)) == pytest.approx(1 / 7, abs=1e-3)


def _random_box(rng):
    w, h = rng.uniform(0.05, 0.6, size=2)
    return (rng.uniform(w / 2, 1 - w / 2), rng.uniform(h / 2, 1 - h / 2), w, h)


def test_iou_matches_raster_oracle():
    rng = np.random.default_rng(0)
    for _ in range(200):
        a = _random_box(rng)
        # half the pairs are forced to overlap
        if rng.random() < 0.5:
            b = _random_box(rng)
        else:
            w, h = a[2] * rng.uniform(0.7, 1.3), a[3] * rng.uniform(0.7, 1.3)
            cx = np.clip(a[0] + rng.uniform(-0.1, 0.1), w / 2, 1 - w / 2)
            cy = np.clip(a[1] + rng.uniform(-0.1, 0.1), h / 2, 1 - h / 2)
            b = (cx, cy, w, h)
        assert abs(iou(a, b) - raster_iou(a, b)) < 1e-3


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**31))
def test_iou_symmetric_and_bounded(seed):
    rng = np.random.default_rng(seed)
    a, b = _random_box(rng), _random_box(rng)
    v = iou(a, b)
    assert v == iou(b, a) and 0.0 <= v <= 1.0
    assert (v == 1.0) == (a == b)


# NMS -----------------------------------------------------------------------------

def test_nms_examples():
    a = Detection(0, 0.5, 0.5, 0.2, 0.2, 0.9)
    b = Detection(0, 0.5, 0.5, 0.2, 0.2, 0.8)
    assert nms([b, a], 0.45) == [a]
    far = [Detection(0, 0.1, 0.1, 0.1, 0.1, 0.5), Detection(0, 0.9, 0.9, 0.1, 0.1, 0.6)]
    assert sorted(nms(far, 0.45), key=lambda d: d.cx) == far
    # another class is never suppressed
    assert len(nms([a, Detection(1, 0.5, 0.5, 0.2, 0.2, 0.8)], 0.45)) == 2
    with pytest.raises(ValueError):
        nms([a], 1.0)


def test_nms_matches_reference():
    rng = np.random.default_rng(1)
    for k in range(1000):
        dets = random_detections(rng, int(rng.integers(0, 50)), quantize=20 if k % 2 else None)
        thr = float(rng.uniform(0.1, 0.9))
        assert nms(dets, thr) == reference_nms(dets, thr)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31))
def test_nms_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    dets = random_detections(rng, 30)
    perm = [dets[i] for i in rng.permutation(len(dets))]
    assert nms(dets, 0.45) == nms(perm, 0.45)


# matching ------------------------------------------------------------------------

def test_match_examples():
    t = [BoxAnnotation(0, 0.5, 0.5, 0.2, 0.2)]
    one = match_detections([Detection(0, 0.5, 0.5, 0.2, 0.2, 0.9)], t)
    assert (one.true_positives, one.false_positives, one.false_negatives) == (1, 0, 0)
    two = match_detections([Detection(0, 0.5, 0.5, 0.2, 0.2, 0.9), Detection(0, 0.51, 0.5, 0.2, 0.2, 0.8)], t)
    assert two.is_tp == [True, False] and two.false_negatives == 0
    wrong = match_detections([Detection(1, 0.5, 0.5, 0.2, 0.2, 0.9)], t)
    assert wrong.is_tp == [False] and wrong.false_negatives == 1


def test_match_replays_oracle():
    rng = np.random.default_rng(2)
    for _ in range(300):
        truths = random_truths(rng, int(rng.integers(1, 8)), 3)
        dets = random_detections(rng, 20)
        # plant some near-hits so the threshold matters
        for t in truths:
            if rng.random() < 0.7:
                dets.append(Detection(t.class_id, t.cx + rng.normal(0, 0.02), t.cy + rng.normal(0, 0.02),
                                      t.w, t.h, float(rng.uniform(0.01, 1))))
        assert match_detections(dets, truths).is_tp == replay_match(dets, truths)


# AP ------------------------------------------------------------------------------

def test_ap_examples():
    assert compute_pr_and_ap([(0.9, True)], 1).ap == 1.0
    assert compute_pr_and_ap([(0.9, True), (0.8, False), (0.7, True)], 2).ap == pytest.approx(5 / 6, abs=1e-12)
    assert compute_pr_and_ap([(0.9, False), (0.3, False)], 3).ap == 0.0
    assert compute_pr_and_ap([], 3).ap == 0.0
    with pytest.raises(ValueError):
        compute_pr_and_ap([(0.5, True)], 0)


def _random_labeled(rng):
    n = int(rng.integers(1, 30))
    truths = int(rng.integers(1, 15))
    conf = rng.uniform(size=n)
    if rng.random() < 0.5:
        conf = np.round(conf * 5) / 5   # ties
    tps = min(truths, n)
    labels = np.zeros(n, bool)
    labels[rng.choice(n, int(rng.integers(0, tps + 1)), replace=False)] = True
    return list(zip(conf.tolist(), labels.tolist())), truths


def test_ap_matches_brute_force():
    rng = np.random.default_rng(3)
    assert abs(compute_pr_and_ap([(0.9, True), (0.8, False), (0.7, True)], 2).ap
               - brute_force_ap([(0.9, True), (0.8, False), (0.7, True)], 2)) < 1e-9
    for _ in range(1000):
        labeled, truths = _random_labeled(rng)
        assert abs(compute_pr_and_ap(labeled, truths).ap - brute_force_ap(labeled, truths)) < 1e-9


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**31))
def test_ap_properties(seed):
    rng = np.random.default_rng(seed)
    labeled, truths = _random_labeled(rng)
    base = compute_pr_and_ap(labeled, truths)
    assert 0.0 <= base.ap <= 1.0
    assert np.all(np.diff(base.recall) >= 0)
    # strictly monotone transform of confidences
    moved = [(np.exp(3 * c) - 7.0, tp) for c, tp in labeled]
    assert compute_pr_and_ap(moved, truths).ap == pytest.approx(base.ap, abs=1e-12)
    lowest = min(c for c, _ in labeled)
    assert compute_pr_and_ap(labeled + [(lowest - 1.0, False)], truths).ap <= base.ap + 1e-12
    if sum(tp for _, tp in labeled) < truths:
        c = float(rng.uniform(lowest - 1, 2))
        assert compute_pr_and_ap(labeled + [(c, True)], truths).ap >= base.ap - 1e-12


def test_combined_equals_single_class():
    rng = np.random.default_rng(4)
    truths = [[BoxAnnotation(0, *_random_box(rng))] for _ in range(10)]
    dets = [[Detection(0, *t[0].box, float(rng.uniform()))] + random_detections(rng, 3, num_classes=1)
            for t in truths]
    rep = evaluate_detections(dets, truths, 1)
    assert rep.combined_ap == rep.ap[0]


def test_perfect_detections_give_ap_one():
    rng = np.random.default_rng(5)
    truths = [random_truths(rng, 2, 3) for _ in range(12)]
    dets = [[Detection(t.class_id, *t.box, 0.9) for t in ts] for ts in truths]
    rep = evaluate_detections(dets, truths, 3)
    assert rep.combined_ap == 1.0 and all(v == 1.0 for v in rep.ap.values())


def test_class_beyond_model_is_data_error():
    with pytest.raises(DataError):
        evaluate_detections([[]], [[BoxAnnotation(4, 0.5, 0.5, 0.2, 0.2)]], 3)


# probability gap -----------------------------------------------------------------

def _d(p, c=0):
    return Detection(c, 0.5, 0.5, 0.1, 0.1, p)


def test_gap_examples():
    g = probability_gap_analysis([_d(0.9), _d(0.92)], [_d(0.4), _d(0.5)])
    assert g.threshold == pytest.approx(0.70) and g.gap > 0 and not g.overlap
    o = probability_gap_analysis([_d(0.9)], [_d(0.95)])
    assert o.overlap and o.threshold is None
    with pytest.raises(ValueError):
        probability_gap_analysis([], [_d(0.3)])
    assert probability_gap_analysis([_d(0.8)], []).threshold == pytest.approx(0.4)


def test_gap_stats_are_quartiles():
    g = probability_gap_analysis([_d(p) for p in (0.5, 0.6, 0.7, 0.8, 0.9)] + [_d(0.95, 1)], [])
    assert g.known_stats[0] == pytest.approx((0.5, 0.6, 0.7, 0.8, 0.9))
    assert g.known_stats[1] == pytest.approx((0.95,) * 5)


# full evaluation on a network ----------------------------------------------------

ANCHORS = ((0.6, 0.9), (1.0, 1.6), (1.5, 1.0))


def _scenes(n=10):
    return generate_scenes(SyntheticSceneSpec(num_boxes=2, class_ids=(0, 1, 2)), n, 3, "val")


def test_silent_model_scores_zero():
    net = build_network(default_backbone(3, ANCHORS, 96), seed=0)
    final = net.layers[-1]
    final.weights.value[...] = 0
    final.bias.value[...] = -30.0
    rep = evaluate(net, _scenes(4))
    assert rep.combined_ap == 0.0 and all(v == 0.0 for v in rep.ap.values())
    assert not rep.all_detections()


def test_evaluation_order_invariant():
    net = build_network(default_backbone(3, ANCHORS, 96), seed=1)
    scenes = _scenes(12)
    a = evaluate(net, scenes)
    b = evaluate(net, [scenes[i] for i in np.random.default_rng(0).permutation(12)])
    for c in a.ap:
        assert abs(a.ap[c] - b.ap[c]) <= 0.02


def test_report_files_deterministic(tmp_path):
    net = build_network(default_backbone(3, ANCHORS, 96), seed=1)
    scenes = _scenes(6)
    rep = evaluate(net, scenes, class_names=["a", "b", "c"])
    first = write_report(rep, tmp_path / "one")
    write_report(evaluate(net, scenes, class_names=["a", "b", "c"]), tmp_path / "two")
    names = sorted(p.name for p in first)
    assert "ap.csv" in names and "pr_combined.svg" in names and "probability_boxplot.svg" in names
    for name in names:
        assert (tmp_path / "one" / name).read_bytes() == (tmp_path / "two" / name).read_bytes()
    tables = report_tables(rep)
    assert tables["ap.csv"].splitlines()[0] == "class,ap"
    assert tables["pr_curves.csv"].splitlines()[0] == "class,recall,precision"
    assert tables["probability_stats.csv"].splitlines()[0] == "class,min,q1,median,q3,max"
