import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import count_pairs, metric_loop
from skyseg import metrics as M


def cm_of(counts):
    counts = np.asarray(counts)
    return M.ConfusionMatrix(len(counts), counts)


def test_accumulate_examples():
    cm = M.accumulate(M.ConfusionMatrix(3), np.full(100, 2), np.full(100, 2))
    assert np.trace(cm.counts) == 100
    cm = M.accumulate(M.ConfusionMatrix(2), [1], [0])
    assert cm.counts[1, 0] == 1 and cm.total == 1


def test_accumulate_ignore_and_range():
    cm = M.accumulate(M.ConfusionMatrix(2), [0, 255, 1], [0, 1, 1])
    assert cm.total == 2
    with pytest.raises(M.LabelRangeError):
        M.accumulate(M.ConfusionMatrix(2), [0, 2], [0, 1])
    with pytest.raises(M.LabelRangeError):
        M.accumulate(M.ConfusionMatrix(2), [0, 1], [0, 5])
    with pytest.raises(ValueError):
        M.accumulate(M.ConfusionMatrix(2), np.zeros((2, 3), int), np.zeros((3, 2), int))


@pytest.mark.parametrize("seed", range(10))
def test_accumulate_matches_counting_oracle(seed):
    rng = np.random.default_rng(seed)
    c = int(rng.integers(2, 8))
    gt = rng.integers(0, c, size=(17, 13))
    pred = rng.integers(0, c, size=(17, 13))
    gt[rng.random(gt.shape) < 0.1] = 255
    cm = M.accumulate(M.ConfusionMatrix(c), gt, pred)
    assert np.array_equal(cm.counts, count_pairs(gt, pred, c, ignore=255))


def test_hand_case_iou_half():
    # class 0: TP 3, FP 1, FN 2
    cm = cm_of([[3, 2], [1, 0]])
    assert M.iou_per_class(cm)[0] == 0.5


def test_two_class_examples():
    cm = cm_of([[3, 1], [2, 4]])
    assert M.pixel_accuracy(cm) == 0.7
    assert np.allclose(M.recall_per_class(cm), [0.75, 2 / 3])
    assert abs(M.mean_recall(cm) - 0.7083333) < 1e-6


def test_perfect_prediction():
    cm = cm_of(np.diag([5, 7, 1]))
    s = M.summary(cm)
    assert all(v == 1.0 for v in s.values())


def test_absent_class_excluded():
    cm = cm_of([[4, 0, 0], [0, 0, 0], [1, 0, 5]])
    iou = M.iou_per_class(cm)
    assert math.isnan(iou[1])
    assert M.mean_iou(cm) == pytest.approx((0.8 + 5 / 6) / 2)


def test_missed_class_scores_zero():
    cm = cm_of([[4, 0], [3, 0]])
    assert M.iou_per_class(cm)[1] == 0.0 and M.recall_per_class(cm)[1] == 0.0


def test_merge_adds_counts():
    a, b = cm_of([[1, 2], [3, 4]]), cm_of([[5, 0], [0, 5]])
    assert (a + b).counts.tolist() == [[6, 2], [3, 9]]
    with pytest.raises(ValueError):
        a.merge(M.ConfusionMatrix(3))


@pytest.mark.parametrize("seed", range(15))
def test_metrics_match_loop_oracle(seed):
    rng = np.random.default_rng(100 + seed)
    c = int(rng.integers(2, 7))
    cm = cm_of(rng.integers(0, 20, size=(c, c)) * (rng.random((c, c)) < 0.7))
    if cm.total == 0:
        cm.counts[0, 0] = 1
    s = M.summary(cm)
    for got, want in zip((s[k] for k in M.SUMMARY), metric_loop(cm.counts)):
        assert got == pytest.approx(want, rel=1e-12, nan_ok=True)


counts = st.lists(st.lists(st.integers(0, 50), min_size=4, max_size=4), min_size=4, max_size=4)


@settings(max_examples=60, deadline=None)
@given(counts)
def test_iou_bounded_by_precision_and_recall(rows):
    cm = cm_of(rows)
    iou, prec, rec = M.iou_per_class(cm), M.precision_per_class(cm), M.recall_per_class(cm)
    for k in range(4):
        if not (math.isnan(prec[k]) or math.isnan(rec[k])):
            assert 0 <= iou[k] <= min(prec[k], rec[k]) + 1e-15


@settings(max_examples=60, deadline=None)
@given(counts, st.permutations(range(4)))
def test_metrics_invariant_under_class_permutation(rows, perm):
    cm = cm_of(rows)
    if cm.total == 0:
        return
    p = list(perm)
    permuted = cm_of(cm.counts[np.ix_(p, p)])
    a, b = M.summary(cm), M.summary(permuted)
    for k in a:
        assert a[k] == pytest.approx(b[k], rel=1e-12, nan_ok=True)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 30), st.integers(0, 2 ** 31))
def test_fwiou_equals_miou_for_balanced_ground_truth(n, seed):
    rng = np.random.default_rng(seed)
    c = 3
    rows = [rng.multinomial(n, [1 / c] * c) for _ in range(c)]
    cm = cm_of(rows)
    assert M.fw_iou(cm) == pytest.approx(M.mean_iou(cm), rel=1e-12)


def test_report_format():
    text = M.report(cm_of(np.diag([2, 3])), ["road", "car"])
    lines = text.split("\n")
    assert lines[0] == "class,tp,fp,fn,iou,precision,recall"
    assert lines[1].startswith("road,2,0,0,1.0") and lines[2].startswith("car,3,0,0,1.0")
    assert "miou,1.0" in lines
    assert "\r" not in text
    with pytest.raises(ValueError):
        M.report(cm_of(np.diag([2, 3])), ["only"])


@settings(max_examples=30, deadline=None)
@given(counts)
def test_report_round_trip(rows):
    cm = cm_of(rows)
    names = ["a", "b", "c", "d"]
    classes, summ = M.parse_report(M.report(cm, names))
    assert [r["class"] for r in classes] == names
    assert [r["tp"] for r in classes] == cm.tp().tolist()
    assert [r["fp"] for r in classes] == cm.fp().tolist()
    assert [r["fn"] for r in classes] == cm.fn().tolist()
    iou = M.iou_per_class(cm)
    for k in range(4):
        assert classes[k]["iou"] == pytest.approx(iou[k], nan_ok=True)
    for k, v in M.summary(cm).items():
        assert summ[k] == pytest.approx(v, nan_ok=True)
