"""AUC and LogLoss."""

from __future__ import annotations

import numpy as np
from scipy.stats import rankdata

from .errors import MetricError

EPS = 1e-7


def auc(scores, labels) -> float:
    """Mann-Whitney AUC from average ranks; tied scores count one half."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUC needs both positive and negative labels")
    ranks = rankdata(scores)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def logloss(scores, labels) -> float:
    p = np.clip(np.asarray(scores, dtype=np.float64).ravel(), EPS, 1.0 - EPS)
    y = np.asarray(labels, dtype=np.float64).ravel()
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log1p(-p)))
