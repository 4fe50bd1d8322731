import math

import numpy as np
import pytest

from vpseval.data import CategoryTable, Category, Segment, VideoAnnotation
from vpseval.panoptic import (PanopticStats, VpqReport, frame_pq_stats, score, stq,
                              vpq_aggregate, vpq_k)

import naive
from randvid import random_pairs


def _assert_stats_equal(stats: PanopticStats, expect: dict):
    got = {c: s for c, s in stats.classes.items() if not s.empty}
    assert sorted(got) == sorted(c for c, v in expect.items() if sum(v[1:]))
    for c, s in got.items():
        iou_sum, tp, fp, fn = expect[c]
        assert (s.tp, s.fp, s.fn) == (tp, fp, fn)
        assert s.iou_sum == pytest.approx(iou_sum, abs=1e-9)


def _assert_close(a, b):
    if math.isnan(b):
        assert math.isnan(a)
    else:
        assert a == pytest.approx(b, abs=1e-9)


PAIRS = random_pairs(seed=123, count=100)


@pytest.mark.parametrize("idx", range(0, 100, 5))
def test_frame_pq_matches_naive(idx):
    pred, gt = PAIRS[idx]
    for t in range(gt.num_frames):
        stats = frame_pq_stats(pred.frames[t], pred.registry, gt.frames[t], gt.registry)
        g1 = VideoAnnotation("g", gt.frames[t:t + 1],
                             {s: v for s, v in gt.registry.items() if (gt.frames[t] == s).any()})
        p1 = VideoAnnotation("p", pred.frames[t:t + 1],
                             {s: v for s, v in pred.registry.items() if (pred.frames[t] == s).any()})
        expect = naive.window_stats(p1, g1, 1)
        _assert_stats_equal(stats, expect)
        _assert_close(score(stats)[1], naive.pq_mean(expect))


@pytest.mark.parametrize("k", [1, 2, 3, 4])
def test_vpq_k_matches_naive(k):
    for pred, gt in PAIRS[::4]:
        stats = vpq_k(pred, gt, k)
        expect = naive.window_stats(pred, gt, k)
        _assert_stats_equal(stats, expect)
        _assert_close(score(stats)[1], naive.pq_mean(expect))


def test_stq_matches_naive():
    for pred, gt in PAIRS[::4]:
        r = stq(pred, gt)
        aq, sq, s = naive.stq(pred, gt)
        _assert_close(r.aq, aq)
        _assert_close(r.sq, sq)
        _assert_close(r.stq, s)


def _video(frames, registry):
    return VideoAnnotation("v", np.asarray(frames, dtype=np.uint16), registry)


def test_perfect_prediction_is_100():
    gt = _video([[[1, 1, 2], [1, 3, 3]]] * 4, {1: Segment(1, 1), 2: Segment(2, 2), 3: Segment(1, 3)})
    for k in (1, 2, 4, 6):
        assert score(vpq_k(gt, gt, k))[1] == 100.0
    r = stq(gt, gt)
    assert (r.aq, r.sq, r.stq) == (1.0, 1.0, 1.0)


def test_window_longer_than_video_uses_single_window():
    gt = _video([[[1, 2]], [[1, 2]]], {1: Segment(1, 1), 2: Segment(1, 2)})
    stats = vpq_k(gt, gt, 6)
    assert stats.counts() == {1: (2, 0, 0)}


def test_iou_exactly_half_is_not_a_match():
    gt = _video([[[1, 1, 1, 1]]], {1: Segment(1, 1)})
    pred = _video([[[1, 1, 2, 2]]], {1: Segment(1, 1), 2: Segment(2, 2)})
    assert vpq_k(pred, gt, 1).counts() == {1: (0, 1, 1), 2: (0, 1, 0)}
    pred = _video([[[1, 1, 1, 2]]], {1: Segment(1, 1), 2: Segment(2, 2)})
    assert vpq_k(pred, gt, 1).counts()[1] == (1, 0, 0)


def test_pred_mostly_on_void_is_not_false_positive():
    gt = _video([[[0, 0, 0, 1]]], {1: Segment(1, 1)})
    pred = _video([[[2, 2, 2, 1]]], {1: Segment(1, 1), 2: Segment(1, 2)})
    assert vpq_k(pred, gt, 1).counts() == {1: (1, 0, 0)}


def test_class_mismatch_never_matches():
    gt = _video([[[1, 1]]], {1: Segment(1, 1)})
    pred = _video([[[1, 1]]], {1: Segment(2, 1)})
    stats = vpq_k(pred, gt, 1)
    assert stats.counts() == {1: (0, 0, 1), 2: (0, 1, 0)}
    assert score(stats)[1] == 0.0


def test_id_switch_lowers_long_windows_only():
    frames = [[[1, 2]], [[1, 2]], [[3, 4]], [[3, 4]]]
    gt = _video(frames, {1: Segment(1, 1), 2: Segment(1, 2), 3: Segment(1, 1), 4: Segment(1, 2)})
    pred = _video(frames, {1: Segment(1, 1), 2: Segment(1, 2), 3: Segment(1, 2), 4: Segment(1, 1)})
    assert score(vpq_k(pred, gt, 1))[1] == 100.0
    assert score(vpq_k(pred, gt, 4))[1] < 100.0
    # each gt track overlaps two pred tracks by 2 of 4 pixels: 2 * (2 * 2/6) / 4
    assert stq(pred, gt).aq == pytest.approx(1 / 3)


def test_empty_video_scores_nan_and_aq_convention():
    gt = _video([[[0, 0]]], {})
    assert math.isnan(score(vpq_k(gt, gt, 1))[1])
    r = stq(gt, gt)
    assert r.aq == 1.0 and math.isnan(r.sq)
    pred = _video([[[1, 1]]], {1: Segment(1, 1)})
    assert stq(pred, gt).aq == 1.0  # pred pixels on void do not form a track
    gt2 = _video([[[1, 0]]], {1: Segment(1, 1)})
    pred2 = _video([[[0, 0]]], {})
    assert stq(pred2, gt2).aq == 0.0


def test_stq_stuff_exclusion_needs_categories():
    cats = CategoryTable([Category(1, "car", True), Category(2, "sky", False)])
    gt = _video([[[1, 2]], [[1, 2]]], {1: Segment(1, 1), 2: Segment(2, 2)})
    pred = _video([[[1, 2]], [[1, 2]]], {1: Segment(1, 1), 2: Segment(2, 5)})
    assert stq(pred, gt, cats, include_stuff=False).aq == 1.0
    with pytest.raises(ValueError):
        stq(pred, gt, include_stuff=False)


def test_mismatched_shapes_raise():
    a = _video([[[1, 1]]], {1: Segment(1, 1)})
    b = _video([[[1, 1]], [[1, 1]]], {1: Segment(1, 1)})
    with pytest.raises(ValueError):
        vpq_k(a, b, 1)
    with pytest.raises(ValueError):
        vpq_k(a, a, 0)


def test_vpq_aggregate_and_report():
    per_k = {1: 59.10, 2: 58.50, 4: 57.90, 6: 57.53}
    assert vpq_aggregate(per_k) == pytest.approx(58.2575, abs=1e-12)
    rep = VpqReport.from_scores(per_k)
    assert rep.windows == [1, 2, 4, 6] and rep.vpq == pytest.approx(58.2575)
    with pytest.raises(ValueError):
        vpq_aggregate({})


def test_stats_merge_is_order_independent():
    parts = [vpq_k(p, g, 2) for p, g in PAIRS[:10]]
    fwd, rev = PanopticStats(), PanopticStats()
    for s in parts:
        fwd.update(s)
    for s in reversed(parts):
        rev.update(s)
    assert fwd.counts() == rev.counts()
    for c in fwd.classes:
        assert fwd.classes[c].iou_sum == pytest.approx(rev.classes[c].iou_sum, abs=1e-12)
