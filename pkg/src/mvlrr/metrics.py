"""External clustering indices: accuracy under the best label map, and NMI."""

from __future__ import annotations

import numpy as np
from scipy.optimize import linear_sum_assignment


def _labels(p) -> np.ndarray:
    return np.asarray(getattr(p, "labels", p)).ravel()


def contingency(pred, truth) -> np.ndarray:
    """Counts ``n[i, j]`` of samples in predicted cluster ``i`` and true class ``j``."""
    a, b = _labels(pred), _labels(truth)
    if a.size != b.size:
        raise ValueError(f"length mismatch: {a.size} predicted vs {b.size} true labels")
    if a.size == 0:
        raise ValueError("empty labeling")
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1), dtype=np.int64)
    np.add.at(table, (ai, bi), 1)
    return table


def hungarian(cost):
    """Minimum-cost perfect assignment on a square matrix.

    Returns ``(assignment, total)`` where row ``i`` is assigned to column
    ``assignment[i]``.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ValueError("cost matrix must be square")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix must be finite")
    rows, cols = linear_sum_assignment(cost)
    assignment = np.empty(cost.shape[0], dtype=np.int64)
    assignment[rows] = cols
    return assignment, float(cost[rows, cols].sum())


def acc(pred, truth) -> float:
    """Fraction of samples whose cluster maps onto their class under the best map."""
    table = contingency(pred, truth)
    k = max(table.shape)
    padded = np.zeros((k, k), dtype=np.int64)
    padded[: table.shape[0], : table.shape[1]] = table
    _, total = hungarian(-padded)
    return -total / table.sum()


def _entropy(counts, n):
    p = counts[counts > 0] / n
    return float(-np.sum(p * np.log(p)))


def nmi(pred, truth) -> float:
    """Mutual information normalised by the geometric mean of the two entropies.

    Returns 0 when either labeling has a single cluster.
    """
    table = contingency(pred, truth).astype(np.float64)
    n = table.sum()
    rows, cols = table.sum(axis=1), table.sum(axis=0)
    h_pred, h_truth = _entropy(rows, n), _entropy(cols, n)
    if h_pred <= 0 or h_truth <= 0:
        return 0.0
    nz = table > 0
    outer = np.outer(rows, cols)
    mi = float(np.sum(table[nz] / n * np.log(n * table[nz] / outer[nz])))
    return float(np.clip(mi / np.sqrt(h_pred * h_truth), 0.0, 1.0))


def report(pred, truth) -> dict:
    """The metrics record emitted by the command-line tool."""
    return {
        "acc": acc(pred, truth),
        "nmi": nmi(pred, truth),
        "n": int(_labels(pred).size),
        "k_pred": int(np.unique(_labels(pred)).size),
        "k_truth": int(np.unique(_labels(truth)).size),
    }
