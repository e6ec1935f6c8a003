import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linear_sum_assignment

from synth import rect, three_building_scene
from xfbd.errors import DimensionMismatch, SceneMismatch
from xfbd.metrics import (
    Counts,
    MetricConfig,
    aggregate,
    collapse_classes,
    evaluate_scene,
    f1_from_counts,
    match_detections,
    object_counts,
    object_f1,
    pixel_f1,
    scene_counts,
    xview2_score,
)
from xfbd.objects import Detection, DetectionSet, iou_matrix
from xfbd.raster import BuildingPolygon, DamageClass, SceneAnnotation, build_target_masks

D = DamageClass


def dset(boxes, labels=None, scene="s"):
    labels = labels or [D.DESTROYED] * len(boxes)
    dets = [Detection(tuple(b), l, 1.0, (b[2] - b[0] + 1) * (b[3] - b[1] + 1)) for b, l in zip(boxes, labels)]
    return DetectionSet(scene, 200, 200, dets)


def max_matching(preds, gts, thr):
    if not preds.detections or not gts.detections:
        return 0
    ok = iou_matrix([d.bbox for d in preds.detections], [d.bbox for d in gts.detections]) >= thr
    r, c = linear_sum_assignment(-ok.astype(float))
    return int(ok[r, c].sum())


# --- pixel ---------------------------------------------------------------------

def test_pixel_f1_identical():
    m = np.array([[0, 2], [2, 1]], np.uint8)
    f1, c = pixel_f1(m, m, 2)
    assert f1 == 1.0 and c == Counts(2, 0, 0)


def test_pixel_f1_two_by_two():
    gt = np.array([[3, 3], [0, 0]], np.uint8)
    pred = np.array([[3, 0], [3, 0]], np.uint8)
    f1, c = pixel_f1(pred, gt, 3)
    assert c == Counts(1, 1, 1) and f1 == 0.5


def test_pixel_f1_absent_class():
    m = np.zeros((3, 3), np.uint8)
    assert pixel_f1(m, m, 4) == (1.0, Counts(0, 0, 0))


def test_pixel_f1_ignore_and_shape():
    gt = np.array([[1, 1]], np.uint8)
    pred = np.array([[1, 0]], np.uint8)
    assert pixel_f1(pred, gt, 1, np.array([[False, True]]))[0] == 1.0
    with pytest.raises(DimensionMismatch):
        pixel_f1(pred, np.zeros((2, 2), np.uint8), 1)


def test_f1_degenerate_conventions():
    assert f1_from_counts(0, 0, 0) == 1.0
    assert f1_from_counts(0, 3, 0) == 0.0
    assert f1_from_counts(0, 0, 2) == 0.0


# --- xView2 score ----------------------------------------------------------------

def test_score_examples():
    assert xview2_score(1.0, [1, 1, 1, 1]) == (1.0, 1.0)
    assert xview2_score(0.5, [1, 1, 1, 1])[1] == pytest.approx(0.85)
    overall, score = xview2_score(0.8, [1, 1, 1, 0])
    assert overall == 0.0 and score == pytest.approx(0.24)


unit = st.floats(0, 1)


@given(unit, st.lists(unit, min_size=4, max_size=4), st.integers(0, 4), st.floats(0, 1))
def test_score_monotone(loc, dmg, which, bump):
    base = xview2_score(loc, dmg)[1]
    if which == 0:
        up = xview2_score(min(1.0, loc + bump), dmg)[1]
    else:
        d2 = list(dmg)
        d2[which - 1] = min(1.0, d2[which - 1] + bump)
        up = xview2_score(loc, d2)[1]
    assert up >= base - 1e-15


# --- collapse --------------------------------------------------------------------

def test_collapse_values():
    m = np.array([[0, 1, 2, 3, 4]], np.uint8)
    assert collapse_classes(m).tolist() == [[0, 1, 1, 2, 2]]
    assert (collapse_classes(np.full((3, 3), 2, np.uint8)) == 1).all()


def test_collapse_removes_within_group_confusion():
    gt = np.array([[1, 2, 2]], np.uint8)
    pred = np.array([[2, 1, 2]], np.uint8)
    assert pixel_f1(pred, gt, 1)[0] < 1.0
    assert pixel_f1(pred, gt, 2)[0] < 1.0
    cp, cg = collapse_classes(pred), collapse_classes(gt)
    assert pixel_f1(cp, cg, 1)[0] == 1.0


@settings(max_examples=50)
@given(st.integers(0, 2**31 - 1))
def test_collapse_tp_low_dominates(seed):
    rng = np.random.default_rng(seed)
    gt = rng.integers(0, 5, (12, 12)).astype(np.uint8)
    pred = rng.integers(0, 5, (12, 12)).astype(np.uint8)
    tp_low = pixel_f1(collapse_classes(pred), collapse_classes(gt), 1)[1].tp
    assert tp_low >= pixel_f1(pred, gt, 1)[1].tp + pixel_f1(pred, gt, 2)[1].tp


# --- matching --------------------------------------------------------------------

def test_match_identical_sets():
    boxes = [(0, 0, 5, 5), (10, 10, 20, 14), (30, 2, 33, 9)]
    a = match_detections(dset(boxes), dset(boxes))
    assert len(a.pairs) == 3 and all(p[2] == 1.0 for p in a.pairs)
    assert a.unmatched_predictions == [] and a.unmatched_ground_truths == []


def test_match_prefers_higher_iou():
    pred = dset([(0, 0, 19, 9)])
    gts = dset([(0, 0, 11, 9), (9, 0, 19, 9)])
    ious = iou_matrix([(0, 0, 19, 9)], [(0, 0, 11, 9), (9, 0, 19, 9)])[0]
    assert ious == pytest.approx([0.6, 0.55])
    a = match_detections(pred, gts)
    assert [(p, g) for p, g, _ in a.pairs] == [(0, 0)]
    assert a.unmatched_ground_truths == [1]


def test_match_threshold_boundary():
    gt = dset([(0, 0, 99, 0)])
    assert match_detections(dset([(0, 0, 48, 0)]), gt).pairs == []
    assert len(match_detections(dset([(0, 0, 49, 0)]), gt).pairs) == 1


def test_match_class_aware():
    boxes = [(0, 0, 5, 5)]
    a = match_detections(dset(boxes, [D.MINOR_DAMAGE]), dset(boxes, [D.DESTROYED]), class_aware=True)
    assert a.pairs == []
    assert len(match_detections(dset(boxes, [D.MINOR_DAMAGE]), dset(boxes, [D.DESTROYED])).pairs) == 1


def test_match_scene_mismatch():
    with pytest.raises(SceneMismatch):
        match_detections(dset([], scene="a"), dset([], scene="b"))


def test_match_one_to_one(rng):
    for _ in range(50):
        p = [tuple(int(v) for v in (x, y, x + w, y + h)) for x, y, w, h in rng.integers(0, 15, (8, 4))]
        g = [tuple(int(v) for v in (x, y, x + w, y + h)) for x, y, w, h in rng.integers(0, 15, (8, 4))]
        a = match_detections(dset(p), dset(g), 0.3)
        ps = [x for x, _, _ in a.pairs]
        gs = [y for _, y, _ in a.pairs]
        assert len(set(ps)) == len(ps) and len(set(gs)) == len(gs)
        assert all(v >= 0.3 for *_, v in a.pairs)
        assert sorted(ps + a.unmatched_predictions) == list(range(8))
        assert sorted(gs + a.unmatched_ground_truths) == list(range(8))


def test_empty_object_f1():
    assert object_f1(match_detections(dset([]), dset([]))) == (1.0, Counts(0, 0, 0))


def test_fused_swath_loses_buildings():
    gts = dset([(1 + 6 * i, 1, 4 + 6 * i, 4) for i in range(5)])
    pred = dset([(0, 0, 29, 5)])
    # every GT box is 16 px inside a 180 px prediction
    assert iou_matrix([pred.detections[0].bbox], [d.bbox for d in gts.detections]).max() == pytest.approx(16 / 180)
    f1, c = object_f1(match_detections(pred, gts))
    assert c == Counts(0, 1, 5) and f1 == 0.0


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_greedy_never_beats_max_matching(seed):
    rng = np.random.default_rng(seed)
    n_p, n_g = rng.integers(0, 7, 2)
    p = [(int(x), int(y), int(x + w), int(y + h)) for x, y, w, h in rng.integers(0, 12, (n_p, 4))]
    g = [(int(x), int(y), int(x + w), int(y + h)) for x, y, w, h in rng.integers(0, 12, (n_g, 4))]
    greedy = len(match_detections(dset(p), dset(g)).pairs)
    best = max_matching(dset(p), dset(g), 0.5)
    assert greedy <= best
    ok = iou_matrix(p, g) >= 0.5 if p and g else np.zeros((0, 0), bool)
    if ok.size == 0 or ok.sum(axis=1).max() <= 1:
        assert greedy == best


def test_brute_force_matching_small():
    rng = np.random.default_rng(7)
    for _ in range(30):
        p = [(int(x), int(y), int(x + w), int(y + h)) for x, y, w, h in rng.integers(0, 6, (4, 4))]
        g = [(int(x), int(y), int(x + w), int(y + h)) for x, y, w, h in rng.integers(0, 6, (4, 4))]
        ok = iou_matrix(p, g) >= 0.5
        brute = max(sum(ok[i, perm[i]] for i in range(4)) for perm in itertools.permutations(range(4)))
        assert max_matching(dset(p), dset(g), 0.5) == brute


# --- scenes ----------------------------------------------------------------------

def test_hand_scored_scene():
    ann, loc, dam = three_building_scene()
    r = evaluate_scene(loc, dam, ann)
    c = r.counts
    assert c.pixel["localization"] == Counts(56, 4, 0)
    assert c.pixel["no-damage"] == Counts(18, 0, 6)
    assert c.pixel["minor-damage"] == Counts(0, 6, 0)
    assert c.pixel["major-damage"] == Counts(0, 0, 16)
    assert c.pixel["destroyed"] == Counts(16, 20, 0)
    assert r.pixel["localization_f1"] == pytest.approx(112 / 116)
    assert r.pixel["damage_f1"]["no-damage"] == pytest.approx(6 / 7)
    assert r.pixel["damage_f1"]["destroyed"] == pytest.approx(8 / 13)
    assert r.pixel["overall_damage_f1"] == 0.0
    assert r.pixel["xview2_score"] == pytest.approx(0.3 * 112 / 116)

    assert c.object["localization"] == Counts(1, 1, 2)
    assert r.object["localization_f1"] == pytest.approx(0.4)
    assert c.object["destroyed"] == Counts(0, 1, 1)
    assert c.object["major-damage"] == Counts(0, 0, 1)
    assert c.object["no-damage"] == Counts(1, 0, 0)
    assert c.object["minor-damage"] == Counts(0, 0, 0)
    assert r.object["damage_f1"] == {"no-damage": 1.0, "minor-damage": 1.0, "major-damage": 0.0, "destroyed": 0.0}


def test_perfect_prediction():
    ann, _, _ = three_building_scene()
    t = build_target_masks(ann)
    r = evaluate_scene(t.loc, t.dam, ann, MetricConfig(collapse=True))
    assert r.pixel["xview2_score"] == 1.0
    assert r.object["localization_f1"] == 1.0
    assert set(r.object["damage_f1"].values()) == {1.0}
    assert r.collapsed == {"low_f1": 1.0, "high_f1": 1.0}


def test_all_background_prediction():
    ann, _, _ = three_building_scene()
    z = np.zeros((16, 16), np.uint8)
    r = evaluate_scene(z, z, ann)
    assert r.pixel["localization_f1"] == 0.0
    assert r.object["localization_f1"] == 0.0


def test_damage_outside_loc_is_background():
    ann, loc, dam = three_building_scene()
    dam2 = dam.copy()
    dam2[15, 15] = 4
    assert evaluate_scene(loc, dam2, ann).counts.pixel == evaluate_scene(loc, dam, ann).counts.pixel


def test_unclassified_pixels_ignored():
    ann = SceneAnnotation("u", 12, 12, [
        BuildingPolygon("a", rect(1, 1, 4, 4), D.DESTROYED),
        BuildingPolygon("u", rect(6, 6, 10, 10), D.UNCLASSIFIED),
    ])
    loc = np.zeros((12, 12), np.uint8)
    dam = np.zeros((12, 12), np.uint8)
    loc[1:4, 1:4] = 1
    dam[1:4, 1:4] = 4
    r = evaluate_scene(loc, dam, ann)
    assert r.pixel["localization_f1"] == 1.0
    assert r.counts.ignored_pixels == 16
    # un-classified buildings are not ground-truth objects either
    assert r.counts.object["localization"] == Counts(1, 0, 0)


def test_scene_dimension_mismatch():
    ann, loc, dam = three_building_scene()
    with pytest.raises(DimensionMismatch):
        scene_counts(loc[:8], dam[:8], ann)


def shifted(ann, dx, scene_id, width):
    return SceneAnnotation(scene_id, width, ann.height, [
        BuildingPolygon(b.uid + scene_id, [(x + dx, y) for x, y in b.vertices], b.label) for b in ann.buildings
    ])


def test_micro_average_equals_concatenation():
    ann, loc, dam = three_building_scene()
    rng = np.random.default_rng(3)
    loc2 = (rng.random((16, 16)) < 0.3).astype(np.uint8)
    dam2 = rng.integers(0, 5, (16, 16)).astype(np.uint8) * loc2
    loc2[:, -1] = 0
    loc[:, -1] = 0
    cfg = MetricConfig(collapse=True)
    agg = aggregate([evaluate_scene(loc, dam, ann, cfg), evaluate_scene(loc2, dam2, ann, cfg)])
    both = SceneAnnotation("cat", 32, 16, shifted(ann, 0, "x", 32).buildings + shifted(ann, 16, "y", 32).buildings)
    cat = evaluate_scene(np.hstack([loc, loc2]), np.hstack([dam, dam2]), both, cfg)
    assert agg.counts.pixel == cat.counts.pixel
    assert agg.counts.object == cat.counts.object
    assert agg.pixel == cat.pixel and agg.object == cat.object and agg.collapsed == cat.collapsed


def test_aggregate_permutation_invariant():
    ann, loc, dam = three_building_scene()
    rng = np.random.default_rng(5)
    reports = [evaluate_scene(loc, dam, ann)]
    for _ in range(3):
        l2 = (rng.random((16, 16)) < 0.4).astype(np.uint8)
        reports.append(evaluate_scene(l2, rng.integers(0, 5, (16, 16)).astype(np.uint8), ann))
    a = aggregate(reports).to_dict()
    b = aggregate(reports[::-1]).to_dict()
    a.pop("scene_id"), b.pop("scene_id")
    assert a == b


def test_report_invariants():
    ann, loc, dam = three_building_scene()
    r = evaluate_scene(loc, dam, ann)
    vals = [r.pixel["localization_f1"], *r.pixel["damage_f1"].values(), r.object["localization_f1"], *r.object["damage_f1"].values()]
    assert all(0.0 <= v <= 1.0 for v in vals)
    assert r.pixel["xview2_score"] == pytest.approx(0.3 * r.pixel["localization_f1"] + 0.7 * r.pixel["overall_damage_f1"])
    row = r.flat_row()
    assert row["object_localization_f1"] == pytest.approx(0.4)


def test_min_area_and_connectivity_change_objects():
    ann = SceneAnnotation("d", 10, 10, [
        BuildingPolygon("a", rect(1, 1, 3, 3), D.DESTROYED),
        BuildingPolygon("b", rect(3, 3, 5, 5), D.DESTROYED),
    ])
    t = build_target_masks(ann)
    # the two squares touch diagonally
    assert evaluate_scene(t.loc, t.dam, ann, MetricConfig(connectivity=8)).counts.object["localization"].tp == 0
    assert evaluate_scene(t.loc, t.dam, ann, MetricConfig(connectivity=4)).counts.object["localization"].tp == 2
    assert evaluate_scene(t.loc, t.dam, ann, MetricConfig(connectivity=4, min_area=5)).counts.object["localization"] == Counts(0, 0, 2)


def test_object_counts_per_class():
    p = dset([(0, 0, 4, 4), (10, 10, 14, 14)], [D.DESTROYED, D.MINOR_DAMAGE])
    g = dset([(0, 0, 4, 4), (10, 10, 14, 14)], [D.DESTROYED, D.MAJOR_DAMAGE])
    assert object_counts(p, g, D.DESTROYED) == Counts(1, 0, 0)
    assert object_counts(p, g, D.MINOR_DAMAGE) == Counts(0, 1, 0)
    assert object_counts(p, g, D.MAJOR_DAMAGE) == Counts(0, 0, 1)
    assert object_counts(p, g) == Counts(2, 0, 0)
