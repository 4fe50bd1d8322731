import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from vpseval.data import SemanticVideo
from vpseval.semantic import ConfusionAccumulator, confusion, miou, vc_n, vc_windows, weighted_iou

import naive


def _sem(frames):
    return SemanticVideo("v", np.asarray(frames, dtype=np.uint16))


def _from_matrix(m):
    """Accumulator whose rows are gt classes 1..n and columns pred classes 1..n."""
    return ConfusionAccumulator({(i + 1, j + 1): n for i, row in enumerate(m)
                                 for j, n in enumerate(row) if n})


def test_hand_matrix_miou_and_weighted():
    acc = _from_matrix([[3, 1], [2, 4]])
    assert acc.class_ious() == {1: pytest.approx(0.5), 2: pytest.approx(4 / 7)}
    assert miou(acc) == pytest.approx((0.5 + 4 / 7) / 2, abs=1e-12)
    assert round(miou(acc), 6) == 0.535714
    assert weighted_iou(acc) == pytest.approx(0.4 * 0.5 + 0.6 * 4 / 7, abs=1e-12)
    assert round(weighted_iou(acc), 6) == 0.542857


def test_hand_matrix_against_pixel_sets():
    # the same counts laid out as actual pixels
    gt = np.array([[1, 1, 1, 1, 2, 2, 2, 2, 2, 2]], dtype=np.uint16)
    pred = np.array([[1, 1, 1, 2, 1, 1, 2, 2, 2, 2]], dtype=np.uint16)
    acc = confusion(_sem([pred]), _sem([gt]))
    assert acc.counts == {(1, 1): 3, (1, 2): 1, (2, 1): 2, (2, 2): 4}
    ious = []
    for c in (1, 2):
        g, p = set(np.flatnonzero(gt == c)), set(np.flatnonzero(pred == c))
        ious.append(len(g & p) / len(g | p))
    assert miou(acc) == pytest.approx(sum(ious) / 2, abs=1e-12)


def test_confusion_small_examples():
    acc = confusion(_sem([[[1, 1]]]), _sem([[[1, 2]]]))
    assert acc.counts == {(1, 1): 1, (2, 1): 1}
    acc = confusion(_sem([[[0, 3, 3]]]), _sem([[[1, 0, 3]]]))
    assert acc.counts == {(1, 0): 1, (3, 3): 1}
    assert acc.total == 2
    with pytest.raises(ValueError):
        confusion(_sem([[[1, 1]]]), _sem([[[1]]]))


@given(st.integers(1, 3).flatmap(lambda t: st.tuples(
    arrays(np.uint16, (t, 8, 8), elements=st.integers(0, 4)),
    arrays(np.uint16, (t, 8, 8), elements=st.integers(0, 4)))))
@settings(max_examples=100, deadline=None)
def test_confusion_matches_pixel_oracle(pair):
    pred, gt = pair
    acc = confusion(_sem(pred), _sem(gt))
    expect = {}
    for f in range(pred.shape[0]):
        for (g, p), n in naive.pixel_table(gt[f], pred[f]).items():
            if g:
                expect[(g, p)] = expect.get((g, p), 0) + n
    assert acc.counts == expect
    assert acc.total == int((gt != 0).sum())
    if acc.total:
        assert 0.0 <= weighted_iou(acc) <= 1.0
        assert 0.0 <= miou(acc) <= 1.0


def test_conventions():
    assert miou(_from_matrix([[5, 0], [0, 2]])) == 1.0
    assert weighted_iou(_from_matrix([[5, 0], [0, 2]])) == 1.0
    # class 2 predicted but absent from gt: IoU 0 and counted in the mean
    acc = ConfusionAccumulator({(1, 1): 3, (1, 2): 1})
    assert acc.class_ious() == {1: 0.75, 2: 0.0}
    assert miou(acc) == pytest.approx(0.375)
    single = ConfusionAccumulator({(1, 1): 3, (1, 0): 1})
    assert miou(single) == weighted_iou(single) == 0.75
    with pytest.raises(ValueError):
        miou(ConfusionAccumulator())
    with pytest.raises(ValueError):
        weighted_iou(ConfusionAccumulator())


def test_merge_order_independent():
    rng = np.random.default_rng(5)
    parts = []
    for _ in range(4):
        a = _sem(rng.integers(0, 4, (2, 5, 5)))
        b = _sem(rng.integers(0, 4, (2, 5, 5)))
        parts.append(confusion(a, b))
    fwd, rev = ConfusionAccumulator(), ConfusionAccumulator()
    for p in parts:
        fwd.update(p)
    for p in reversed(parts):
        rev.update(p)
    assert fwd.counts == rev.counts


# --------------------------------------------------------------------------
# VC

def test_vc_three_frame_fixture():
    gt = _sem(np.ones((3, 2, 2)))
    pred = np.ones((3, 2, 2), dtype=np.uint16)
    pred[1, 0, 1] = 2
    pred = _sem(pred)
    assert vc_n(pred, gt, 3) == 0.75
    assert vc_n(pred, gt, 1) == pytest.approx(11 / 12, abs=1e-15)
    assert vc_windows(pred, gt, 2) == [(3, 4), (3, 4)]


def test_vc_perfect_and_degenerate():
    rng = np.random.default_rng(1)
    base = rng.integers(0, 3, (1, 4, 4))
    gt = _sem(np.where(rng.random((6, 4, 4)) < 0.8, base, rng.integers(0, 3, (6, 4, 4))))
    for n in (1, 2, 5, 8):
        assert vc_n(gt, gt, n) == 1.0
    assert math.isnan(vc_n(gt, _sem(np.zeros((6, 4, 4))), 2))
    with pytest.raises(ValueError):
        vc_n(gt, gt, 0)
    with pytest.raises(ValueError):
        vc_n(gt, gt, 2, mode="lenient")


def test_vc_pred_void_is_mismatch_and_self_mode():
    gt = _sem(np.ones((2, 1, 2)))
    pred = _sem([[[0, 2]], [[0, 2]]])
    assert vc_n(pred, gt, 2) == 0.0
    assert vc_n(pred, gt, 2, mode="self") == 1.0
    flicker = _sem([[[1, 1]], [[2, 1]]])
    assert vc_n(flicker, gt, 2) == 0.5
    assert vc_n(flicker, gt, 2, mode="self") == 0.5


def test_vc_matches_window_oracle():
    rng = np.random.default_rng(9)
    for _ in range(40):
        T = int(rng.integers(1, 7))
        gt = rng.integers(0, 3, (T, 5, 6))
        gt = np.where(rng.random(gt.shape) < 0.6, gt[:1], gt)  # mostly stable labels
        pred = np.where(rng.random(gt.shape) < 0.8, gt, rng.integers(0, 3, gt.shape))
        for n in (1, 2, 3, 8):
            for mode in ("strict", "self"):
                got = vc_n(_sem(pred), _sem(gt), n, mode)
                expect = naive.vc(pred, gt, n, mode)
                if math.isnan(expect):
                    assert math.isnan(got)
                else:
                    assert got == pytest.approx(expect, abs=1e-12)


def test_vc1_is_pixel_accuracy_with_equal_labeled_area_per_frame():
    rng = np.random.default_rng(4)
    for _ in range(50):
        T, H, W = int(rng.integers(1, 6)), int(rng.integers(1, 9)), int(rng.integers(1, 9))
        gt = rng.integers(1, 4, (T, H, W))
        n_void = int(rng.integers(0, H * W))  # same void count in every frame
        for t in range(T):
            gt[t].flat[rng.permutation(H * W)[:n_void]] = 0
        if n_void == H * W:
            continue
        pred = np.where(rng.random(gt.shape) < 0.7, gt, rng.integers(0, 4, gt.shape))
        labeled = gt != 0
        acc = (pred[labeled] == gt[labeled]).mean()
        assert vc_n(_sem(pred), _sem(gt), 1) == pytest.approx(acc, abs=1e-12)


def test_pooled_vc1_is_pixel_accuracy_for_any_void_layout():
    rng = np.random.default_rng(5)
    for _ in range(50):
        T, H, W = int(rng.integers(1, 6)), int(rng.integers(1, 9)), int(rng.integers(1, 9))
        gt = np.where(rng.random((T, H, W)) < 0.3, 0, rng.integers(1, 4, (T, H, W)))
        labeled = gt != 0
        if not labeled.any():
            continue
        pred = np.where(rng.random(gt.shape) < 0.7, gt, rng.integers(0, 4, gt.shape))
        counts = vc_windows(_sem(pred), _sem(gt), 1)
        pooled = sum(c for c, _ in counts) / sum(s for _, s in counts)
        assert pooled == pytest.approx((pred[labeled] == gt[labeled]).mean(), abs=1e-12)
