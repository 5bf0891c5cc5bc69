import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from microfuse.metrics import (UndefinedMetricError, auroc, average_precision, brier, map_macro,
                               metric_report, select_threshold, threshold_grid, threshold_sweep,
                               thresholded_metrics)


def pairwise_auroc(s, y):
    pos = [a for a, l in zip(s, y) if l == 1]
    neg = [b for b, l in zip(s, y) if l == 0]
    total = sum(1.0 if a > b else 0.5 if a == b else 0.0 for a, b in itertools.product(pos, neg))
    return total / (len(pos) * len(neg))


def enumerated_ap(s, y):
    """Sum over distinct thresholds, high to low, of (recall gain) x precision."""
    n_pos = sum(y)
    ap, prev_recall = 0.0, 0.0
    for t in sorted(set(s), reverse=True):
        pred = [v >= t for v in s]
        tp = sum(1 for p, l in zip(pred, y) if p and l == 1)
        recall = tp / n_pos
        ap += (recall - prev_recall) * tp / sum(pred)
        prev_recall = recall
    return ap


def confusion_metrics(s, y, t):
    tp = fp = tn = fn = 0
    for v, l in zip(s, y):
        if v >= t:
            tp, fp = (tp + 1, fp) if l == 1 else (tp, fp + 1)
        else:
            fn, tn = (fn + 1, tn) if l == 1 else (fn, tn + 1)
    f1 = lambda a, b, c: 0.0 if 2 * a + b + c == 0 else 2 * a / (2 * a + b + c)
    rec = lambda a, b: 0.0 if a + b == 0 else a / (a + b)
    return ((f1(tp, fp, fn) + f1(tn, fn, fp)) / 2, (rec(tp, fn) + rec(tn, fp)) / 2, (tp + tn) / len(y))


instances = st.integers(2, 30).flatmap(lambda n: st.tuples(
    st.lists(st.sampled_from([0.0, 0.1, 0.25, 0.5, 0.5, 0.75, 0.9, 1.0]) | st.floats(0, 1), min_size=n, max_size=n),
    st.lists(st.integers(0, 1), min_size=n, max_size=n)).filter(lambda t: 0 < sum(t[1]) < n))


def test_auroc_worked_example():
    assert auroc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75


def test_auroc_extremes_and_constant():
    assert auroc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert auroc([0.9, 0.8, 0.2, 0.1], [0, 0, 1, 1]) == 0.0
    assert auroc([0.5] * 6, [0, 1, 0, 1, 1, 0]) == 0.5


def test_single_class_is_undefined():
    with pytest.raises(UndefinedMetricError):
        auroc([0.1, 0.2], [1, 1])
    with pytest.raises(UndefinedMetricError):
        average_precision([0.1, 0.2], [0, 0])
    with pytest.raises(UndefinedMetricError):
        map_macro([0.1, 0.2], [1, 1])


def test_ap_constant_scorer_gets_base_rate():
    assert average_precision([0.3] * 5, [1, 0, 0, 1, 0]) == pytest.approx(0.4, abs=1e-15)


def test_ap_worked_example():
    # ranks: 0.9(1) 0.8(0) 0.7(1) -> AP = 1/2*1 + 1/2*2/3
    assert average_precision([0.9, 0.8, 0.7], [1, 0, 1]) == pytest.approx(5 / 6, abs=1e-15)


def test_thresholded_degenerate_predictions():
    f1, rec, acc = thresholded_metrics([0.9, 0.8, 0.7], [1, 0, 1], 0.5)
    assert rec == 0.5
    assert f1 == pytest.approx((0.8 + 0.0) / 2)
    assert acc == pytest.approx(2 / 3)


def test_brier_worked_example_and_range():
    assert brier([1.0, 0.0, 0.5], [1, 0, 1]) == pytest.approx(0.25 / 3)
    with pytest.raises(ValueError):
        brier([1.2], [1])


@settings(max_examples=1000, deadline=None)
@given(instances, st.sampled_from([0.3, 0.5, 0.75]))
def test_metrics_match_brute_force(inst, t):
    s, y = inst
    assert abs(auroc(s, y) - pairwise_auroc(s, y)) <= 1e-10
    assert abs(average_precision(s, y) - enumerated_ap(s, y)) <= 1e-10
    neg_ap = enumerated_ap([-v for v in s], [1 - l for l in y])
    assert abs(map_macro(s, y) - (enumerated_ap(s, y) + neg_ap) / 2) <= 1e-10
    for got, want in zip(thresholded_metrics(s, y, t), confusion_metrics(s, y, t)):
        assert abs(got - want) <= 1e-10
    assert abs(brier(s, y) - sum((a - b) ** 2 for a, b in zip(s, y)) / len(s)) <= 1e-10


@settings(max_examples=50, deadline=None)
@given(instances)
def test_rank_metrics_invariant_to_monotone_maps(inst):
    s, y = inst
    s = np.asarray(s)
    # scaling by a power of two is exact in floating point, so order and ties survive
    warped = np.ldexp(s, 5)
    assert auroc(warped, y) == pytest.approx(auroc(s, y), abs=1e-12)
    assert average_precision(warped, y) == pytest.approx(average_precision(s, y), abs=1e-12)


def test_report_rank_metrics_threshold_free():
    rng = np.random.default_rng(0)
    s, y = rng.random(50), rng.integers(0, 2, 50)
    a, b = metric_report(s, y, 0.5), metric_report(s, y, 0.3)
    assert (a.auroc, a.auprc, a.map) == (b.auroc, b.auprc, b.map)


def test_threshold_grid_shape():
    g = threshold_grid()
    assert g.size == 199
    assert g[0] == pytest.approx(0.005) and g[-1] == pytest.approx(0.995)
    assert 0.5 in g


def test_select_threshold_prefers_point_nearest_half_on_ties():
    # perfectly separable at anything in (0.2, 0.8): many tied maxima
    sweep = threshold_sweep([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1])
    assert select_threshold(sweep) == pytest.approx(0.5)


def test_select_threshold_finds_shifted_optimum():
    s = [0.05, 0.1, 0.15, 0.2, 0.25, 0.3]
    y = [0, 0, 0, 1, 1, 1]
    t = select_threshold(threshold_sweep(s, y))
    assert 0.15 < t <= 0.2
    assert thresholded_metrics(s, y, t)[0] == 1.0
