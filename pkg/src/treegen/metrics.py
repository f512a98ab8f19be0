"""Evaluation metrics for validation and the eval command.

CRPS is evaluated analytically for piecewise-uniform forecasts, whose CDF is
piecewise linear.
"""

from __future__ import annotations

import numpy as np

from .errors import DegenerateTargets, SingleClass


def r2(predictions: np.ndarray, targets: np.ndarray) -> float:
    """Coefficient of determination, 1 - SSE/SST."""
    p = np.asarray(predictions, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if len(p) != len(t) or len(t) < 2:
        raise DegenerateTargets("need at least two prediction/target pairs")
    sst = float(np.sum((t - t.mean()) ** 2))
    if sst == 0.0:
        raise DegenerateTargets("targets have zero variance")
    sse = float(np.sum((t - p) ** 2))
    return 1.0 - sse / sst


def _rankdata(scores: np.ndarray) -> np.ndarray:
    """1-based ranks with ties assigned their average rank."""
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(len(scores), dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Area under the ROC curve via the Mann-Whitney statistic; ties count 1/2."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(np.int64)
    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    if n_pos == 0 or n_neg == 0 or n_pos + n_neg != len(y):
        raise SingleClass("labels must contain both classes (0 and 1)")
    ranks = _rankdata(s)
    pos_rank_sum = float(ranks[y == 1].sum())
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def accuracy(predicted: np.ndarray, labels: np.ndarray) -> float:
    p = np.asarray(predicted)
    t = np.asarray(labels)
    if len(p) != len(t):
        raise ValueError("length mismatch")
    return float(np.mean(p == t))


def mae(predictions: np.ndarray, targets: np.ndarray) -> float:
    p = np.asarray(predictions, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if len(p) != len(t):
        raise ValueError("length mismatch")
    return float(np.mean(np.abs(p - t)))


def crps(bounds: np.ndarray, probs: np.ndarray, y: float) -> float:
    """CRPS of a piecewise-uniform forecast against an outcome y.

    ``bounds`` holds the n+1 bin boundaries of an n-bin forecast with bin
    probabilities ``probs``. The integrand (F(x) - 1{x >= y})^2 is a squared
    linear function inside each bin, integrated in closed form; y is clamped
    into the support.
    """
    b = np.asarray(bounds, dtype=np.float64)
    p = np.asarray(probs, dtype=np.float64)
    if len(b) != len(p) + 1:
        raise ValueError("need len(probs)+1 bounds")
    if np.any(np.diff(b) <= 0):
        raise ValueError("bounds must be strictly increasing")
    if abs(p.sum() - 1.0) > 1e-9 or (p < 0).any():
        raise ValueError("probs must form a distribution")
    y = float(np.clip(y, b[0], b[-1]))

    def seg(f0: float, slope: float, a: float, lo: float, hi: float, theta: float) -> float:
        # integral of (f0 + slope*(x-a) - theta)^2 over [lo, hi]
        if hi <= lo:
            return 0.0
        c_lo = f0 - theta + slope * (lo - a)
        c_hi = f0 - theta + slope * (hi - a)
        if slope == 0.0:
            return c_lo * c_lo * (hi - lo)
        return (c_hi ** 3 - c_lo ** 3) / (3.0 * slope)

    total = 0.0
    f_cum = 0.0
    for k in range(len(p)):
        a, bb = b[k], b[k + 1]
        slope = p[k] / (bb - a)
        total += seg(f_cum, slope, a, a, min(bb, max(a, y)), 0.0)
        total += seg(f_cum, slope, a, max(a, min(bb, y)), bb, 1.0)
        f_cum += p[k]
    return total
