"""Edge filtering by matrix quantiles and the internal leave-one-out threshold search."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import DataError, DegenerateLabelsError
from .kernel import KernelMatrix
from .scoring import ScoreSpec, score_rows

__all__ = [
    "DEFAULT_GRID",
    "ThresholdResult",
    "as_grid",
    "matrix_quantile",
    "filter_matrix",
    "filter_row",
    "auc",
    "optimize_thresh_by_loo",
]

DEFAULT_GRID = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.99)


def as_grid(levels: Sequence[float]) -> np.ndarray:
    """Validate a quantile grid: non-empty, strictly increasing, inside [0, 1]."""
    q = np.asarray(levels, dtype=float).ravel()
    if q.size == 0:
        raise DataError("quantile grid is empty")
    if np.any(q < 0) or np.any(q > 1):
        raise DataError("quantile levels must lie in [0, 1]")
    if np.any(np.diff(q) <= 0):
        raise DataError("quantile grid must be strictly increasing")
    return q


@dataclass
class ThresholdResult:
    quantile: float
    auc: float
    threshold: float
    grid: np.ndarray = field(repr=False, default=None)
    aucs: np.ndarray = field(repr=False, default=None)


def _array(K) -> np.ndarray:
    return K.values if isinstance(K, KernelMatrix) else np.asarray(K, dtype=float)


def _offdiag_upper(K: np.ndarray) -> np.ndarray:
    n = K.shape[0]
    if n < 2:
        raise DataError("matrix quantiles need n >= 2")
    return K[np.triu_indices(n, k=1)]


def matrix_quantile(K, q):
    """Linear-interpolation quantile(s) of the strict upper triangle of K."""
    vals = _offdiag_upper(_array(K))
    qs = np.asarray(q, dtype=float)
    if np.any(qs < 0) or np.any(qs > 1):
        raise DataError("quantile level must lie in [0, 1]")
    out = np.quantile(vals, qs)
    return float(out) if out.ndim == 0 else out


def _wrap(K, values):
    if isinstance(K, KernelMatrix):
        return KernelMatrix(K.sample_ids, values, K.spec)
    return values


def filter_matrix(K, threshold: float):
    """Zero every off-diagonal entry below ``threshold``; the diagonal is kept."""
    A = _array(K)
    out = np.where(A < threshold, 0.0, A)
    np.fill_diagonal(out, np.diag(A))
    return _wrap(K, out)


def filter_row(K, i: int, threshold: float):
    """Zero the entries of row ``i`` (and column ``i``) below ``threshold``, diagonal kept."""
    A = _array(K)
    if not 0 <= i < A.shape[0]:
        raise DataError(f"node index {i} out of range")
    out = A.copy()
    drop = A[i] < threshold
    drop[i] = False
    out[i, drop] = 0.0
    out[drop, i] = 0.0
    return _wrap(K, out)


def auc(scores, labels) -> float:
    """Area under the ROC curve as the Mann-Whitney statistic (ties count 1/2)."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels, dtype=bool)
    if s.shape != y.shape:
        raise DataError("scores and labels differ in length")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabelsError("AUC needs at least one positive and one negative")
    ranks = rankdata(s)
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def optimize_thresh_by_loo(
    K,
    positives,
    targets,
    grid: Sequence[float] = DEFAULT_GRID,
    spec: ScoreSpec = ScoreSpec("nearest"),
    negatives=None,
) -> ThresholdResult:
    """Pick the edge-filtering quantile that maximises the leave-one-out AUC.

    The diagonal of K is zeroed once, so every target node is scored without
    its own label.  For each grid level (ascending) the edges below that
    quantile are removed and the targets are scored; the first level reaching
    the best AUC wins.  ``negatives`` defaults to every node not in
    ``positives``.
    """
    A = _array(K)
    n = A.shape[0]
    q = as_grid(grid)
    pos = np.unique(np.asarray(positives, dtype=int))
    tgt = np.asarray(targets, dtype=int)
    neg = None if negatives is None else np.unique(np.asarray(negatives, dtype=int))
    y = np.isin(tgt, pos)
    if y.all() or not y.any():
        raise DegenerateLabelsError("targets must contain positive and negative nodes")

    Kz = A.copy()
    np.fill_diagonal(Kz, 0.0)
    thresholds = np.atleast_1d(matrix_quantile(Kz, q))
    rows = Kz[tgt]
    best, best_auc = 0, -np.inf
    aucs = np.empty(q.size)
    for j, theta in enumerate(thresholds):
        filtered = np.where(rows < theta, 0.0, rows)
        s, _ = score_rows(filtered, pos, spec, neg, n_positive=pos.size)
        aucs[j] = auc(s, y)
        if aucs[j] > best_auc:
            best, best_auc = j, aucs[j]
    return ThresholdResult(float(q[best]), float(best_auc), float(thresholds[best]), q, aucs)
