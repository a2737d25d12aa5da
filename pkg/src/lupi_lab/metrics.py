"""Evaluation metrics.

ROC AUC is the Mann-Whitney rank statistic with midrank tie handling;
normalized ROC AUC is 2*auc - 1 (chance at 0, perfect ranking at 1).
The regression experiments report MSE against the clean target sin(2*pi*x)
on a fixed 1024-point grid."""

from __future__ import annotations

import numpy as np

from .synthgen import noise_free_target

METRIC_KINDS = ("accuracy", "roc_auc", "normalized_roc_auc", "cross_entropy",
                "mse_to_noise_free")

_CLAMP = 1e-12
GRID_SIZE = 1024


def _as_1d_scores(scores: np.ndarray) -> np.ndarray:
    """Positive-class score column: 2-column score matrices use column 1."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim == 2 and scores.shape[1] == 2:
        return scores[:, 1]
    if scores.ndim == 2 and scores.shape[1] == 1:
        return scores[:, 0]
    if scores.ndim == 1:
        return scores
    raise ValueError(f"cannot interpret scores of shape {scores.shape} as binary scores")


def _as_labels(targets: np.ndarray) -> np.ndarray:
    targets = np.asarray(targets, dtype=np.float64)
    if targets.ndim == 2:
        return np.argmax(targets, axis=1).astype(np.float64)
    return targets


def accuracy(scores, targets) -> float:
    """Fraction of correct predictions: argmax over score columns, or
    thresholding 1-column scores at 0.5."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = _as_labels(targets)
    if scores.ndim == 2 and scores.shape[1] > 1:
        pred = np.argmax(scores, axis=1)
    else:
        pred = (np.ravel(scores) > 0.5).astype(np.float64)
    if len(pred) != len(labels):
        raise ValueError("scores and targets must have equal lengths")
    return float(np.mean(pred == labels))


def roc_auc(scores, targets) -> float:
    """Midrank Mann-Whitney AUC: P(score_pos > score_neg) + P(equal)/2."""
    s = _as_1d_scores(scores)
    labels = _as_labels(targets)
    if len(s) != len(labels):
        raise ValueError("scores and targets must have equal lengths")
    if len(s) < 1:
        raise ValueError("need at least one sample")
    pos = labels == 1.0
    neg = labels == 0.0
    n_pos, n_neg = int(pos.sum()), int(neg.sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("roc_auc needs both classes present")
    # midranks: average rank over each tie group, ranks 1..n
    order = np.argsort(s, kind="mergesort")
    ranks = np.empty(len(s))
    sorted_s = s[order]
    i = 0
    while i < len(s):
        j = i
        while j + 1 < len(s) and sorted_s[j + 1] == sorted_s[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    rank_sum = ranks[pos].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def normalized_roc_auc(scores, targets) -> float:
    """2*auc - 1, exactly."""
    return 2.0 * roc_auc(scores, targets) - 1.0


def cross_entropy(scores, targets) -> float:
    """Mean clamped cross-entropy of predicted probabilities."""
    p = np.clip(np.asarray(scores, dtype=np.float64), _CLAMP, 1.0 - _CLAMP)
    t = np.asarray(targets, dtype=np.float64)
    if p.shape[0] != t.shape[0]:
        raise ValueError("scores and targets must have equal lengths")
    if p.ndim == 2 and p.shape[1] > 1:
        return float(-np.sum(t * np.log(p)) / p.shape[0])
    p = np.ravel(p)
    t = np.ravel(t)
    return float(-np.mean(t * np.log(p) + (1 - t) * np.log(1 - p)))


def noise_free_grid(grid_size: int = GRID_SIZE) -> np.ndarray:
    """The evaluation grid: grid_size evenly spaced points k/grid_size on
    [0, 1).  Excluding the right endpoint keeps the grid mean of
    sin^2(2*pi*x) at exactly 1/2 (full-period discrete orthogonality)."""
    return np.arange(grid_size) / grid_size


def mse_to_noise_free(predict, grid_size: int = GRID_SIZE) -> float:
    """Mean squared error of a predictor against sin(2*pi*x) on the grid.

    `predict` maps an (n, 1) column of x values to an (n,) or (n, 1)
    prediction array."""
    x = noise_free_grid(grid_size)
    pred = np.ravel(predict(x[:, None]))
    if pred.shape != x.shape:
        raise ValueError(f"predictor returned shape {pred.shape}, wanted {x.shape}")
    if not np.all(np.isfinite(pred)):
        raise ValueError("predictor returned non-finite values")
    return float(np.mean((pred - noise_free_target(x)) ** 2))


def metric_eval(kind: str, scores, targets) -> float:
    """Dispatch a metric by name.

    For mse_to_noise_free, `targets` holds the x grid values and `scores`
    the predictions at those points."""
    if kind == "accuracy":
        return accuracy(scores, targets)
    if kind == "roc_auc":
        return roc_auc(scores, targets)
    if kind == "normalized_roc_auc":
        return normalized_roc_auc(scores, targets)
    if kind == "cross_entropy":
        return cross_entropy(scores, targets)
    if kind == "mse_to_noise_free":
        pred = np.ravel(np.asarray(scores, dtype=np.float64))
        x = np.ravel(np.asarray(targets, dtype=np.float64))
        if pred.shape != x.shape:
            raise ValueError("scores and targets must have equal lengths")
        if not np.all(np.isfinite(pred)):
            raise ValueError("non-finite predictions")
        return float(np.mean((pred - noise_free_target(x)) ** 2))
    raise ValueError(f"unknown metric kind {kind!r}")
