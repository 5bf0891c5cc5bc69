"""Binary classification metrics: rank metrics, thresholded metrics, Brier,
and threshold sweeps.

``map_macro`` is the two-class macro average precision (class 1 on the
scores, class 0 on the negated scores).  That is why it differs from AUPRC,
which is average precision for class 1 only.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata

DEFAULT_THRESHOLD = 0.5
MAP_DEFINITION = "macro average precision over classes {0, 1}"


class UndefinedMetricError(ValueError):
    pass


def _as_arrays(scores, labels):
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel().astype(np.int64)
    if s.shape != y.shape or s.size == 0:
        raise ValueError(f"scores and labels must be non-empty and equal length ({s.size} vs {y.size})")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0 or 1")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    return s, y


def auroc(scores, labels) -> float:
    """Mann-Whitney AUROC; tied positive/negative pairs count one half."""
    s, y = _as_arrays(scores, labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUROC needs at least one positive and one negative")
    ranks = rankdata(s)
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def average_precision(scores, labels, positive_class: int = 1) -> float:
    """Step-wise average precision, one step per distinct score threshold.

    Tied scores enter the ranking together, so a constant scorer gets the
    base rate.  For ``positive_class=0`` the scores are negated.
    """
    s, y = _as_arrays(scores, labels)
    if positive_class == 0:
        s, y = -s, 1 - y
    elif positive_class != 1:
        raise ValueError("positive_class must be 0 or 1")
    n_pos = int(y.sum())
    if n_pos == 0:
        raise UndefinedMetricError(f"class {positive_class} absent; average precision undefined")
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    tp = np.cumsum(y)
    seen = np.arange(1, y.size + 1)
    # last index of each block of tied scores
    last = np.r_[np.nonzero(np.diff(s))[0], y.size - 1]
    tp_t = tp[last]
    precision = tp_t / seen[last]
    recall_step = np.diff(np.r_[0, tp_t]) / n_pos
    return float(np.sum(recall_step * precision))


def auprc(scores, labels) -> float:
    return average_precision(scores, labels, positive_class=1)


def map_macro(scores, labels) -> float:
    s, y = _as_arrays(scores, labels)
    if y.min() == y.max():
        raise UndefinedMetricError("mAP needs both classes present")
    return 0.5 * (average_precision(s, y, 1) + average_precision(s, y, 0))


def _f1(tp: int, fp: int, fn: int) -> float:
    denom = 2 * tp + fp + fn
    return 0.0 if denom == 0 else 2.0 * tp / denom


def thresholded_metrics(scores, labels, threshold: float = DEFAULT_THRESHOLD):
    """``(macro_f1, macro_recall, accuracy)`` predicting 1 iff ``score >= threshold``."""
    s, y = _as_arrays(scores, labels)
    pred = s >= threshold
    truth = y == 1
    tp = int(np.sum(pred & truth))
    tn = int(np.sum(~pred & ~truth))
    fp = int(np.sum(pred & ~truth))
    fn = int(np.sum(~pred & truth))
    f1_pos = _f1(tp, fp, fn)
    f1_neg = _f1(tn, fn, fp)
    rec_pos = tp / (tp + fn) if tp + fn else 0.0
    rec_neg = tn / (tn + fp) if tn + fp else 0.0
    return (f1_pos + f1_neg) / 2.0, (rec_pos + rec_neg) / 2.0, (tp + tn) / y.size


def brier(scores, labels) -> float:
    s, y = _as_arrays(scores, labels)
    if s.min() < 0.0 or s.max() > 1.0:
        raise ValueError("Brier score needs probabilities in [0, 1]")
    return float(np.mean((s - y) ** 2))


@dataclass
class MetricReport:
    auroc: float
    auprc: float
    map: float
    macro_f1: float
    macro_recall: float
    accuracy: float
    brier: float
    threshold: float

    def to_dict(self) -> dict:
        return asdict(self)


def metric_report(scores, labels, threshold: float = DEFAULT_THRESHOLD) -> MetricReport:
    s, y = _as_arrays(scores, labels)
    f1, rec, acc = thresholded_metrics(s, y, threshold)
    return MetricReport(auroc=auroc(s, y), auprc=auprc(s, y), map=map_macro(s, y),
                        macro_f1=f1, macro_recall=rec, accuracy=acc,
                        brier=brier(s, y), threshold=float(threshold))


@dataclass
class ThresholdSweep:
    thresholds: np.ndarray
    macro_f1: np.ndarray
    accuracy: np.ndarray
    positive_rate: np.ndarray

    def rows(self):
        for t, f, a, r in zip(self.thresholds, self.macro_f1, self.accuracy, self.positive_rate):
            yield {"threshold": float(t), "macro_f1": float(f), "accuracy": float(a),
                   "positive_rate": float(r)}


def threshold_grid(resolution: int = 199) -> np.ndarray:
    """``resolution`` evenly spaced thresholds strictly inside (0, 1).

    The default 199 points are 0.005, 0.010, ..., 0.995.
    """
    if resolution < 2:
        raise ValueError("grid resolution must be at least 2")
    return np.arange(1, resolution + 1) / (resolution + 1)


def threshold_sweep(scores, labels, resolution: int = 199) -> ThresholdSweep:
    s, y = _as_arrays(scores, labels)
    grid = threshold_grid(resolution)
    f1 = np.empty(grid.size)
    acc = np.empty(grid.size)
    rate = np.empty(grid.size)
    for i, t in enumerate(grid):
        f1[i], _, acc[i] = thresholded_metrics(s, y, t)
        rate[i] = np.mean(s >= t)
    return ThresholdSweep(grid, f1, acc, rate)


def select_threshold(sweep: ThresholdSweep) -> float:
    """Grid threshold with the highest macro-F1; ties go to the one nearest 0.5."""
    best = sweep.macro_f1.max()
    candidates = sweep.thresholds[sweep.macro_f1 == best]
    return float(candidates[np.argmin(np.abs(candidates - DEFAULT_THRESHOLD))])
