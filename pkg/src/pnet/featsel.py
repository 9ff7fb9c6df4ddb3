"""Two-group differential statistics for ranking features.

``welch_t`` is the unequal-variance t-test with Welch-Satterthwaite degrees of
freedom.  ``moderated_t`` shrinks the per-feature pooled variance towards a
common prior whose parameters are estimated by matching the moments of
``log s^2`` across all features (empirical Bayes, as in limma's eBayes).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from ._io import atomic_write, fmt_float
from .dataset import ExpressionMatrix, PhenotypeLabels
from .errors import DataError, DegenerateLabelsError

log = logging.getLogger(__name__)

__all__ = [
    "FeatureStats",
    "welch_t",
    "moderated_t",
    "select_top_k",
    "two_sided_p",
    "fit_prior_variance",
    "trigamma_inverse",
]


@dataclass
class FeatureStats:
    feature_ids: list[str]
    t: np.ndarray
    df: np.ndarray
    p: np.ndarray
    flagged: np.ndarray = field(default=None, repr=False)
    prior_df: float | None = None
    prior_var: float | None = None

    def __post_init__(self):
        if self.flagged is None:
            self.flagged = np.zeros(len(self.feature_ids), dtype=bool)

    def __len__(self):
        return len(self.feature_ids)

    def to_tsv(self, path) -> None:
        with atomic_write(path) as fh:
            fh.write("feature_id\tt\tdf\tp\n")
            for fid, t, df, p in zip(self.feature_ids, self.t, self.df, self.p):
                fh.write(f"{fid}\t{fmt_float(t)}\t{fmt_float(df)}\t{fmt_float(p)}\n")


def two_sided_p(t, df):
    """Two-sided tail probability of Student's t; ``df=inf`` gives the normal tail."""
    t = np.abs(np.asarray(t, dtype=float))
    df = np.broadcast_to(np.asarray(df, dtype=float), t.shape)
    inf = np.isinf(df)
    p = np.where(inf, 2.0 * special.ndtr(-t), 2.0 * special.stdtr(np.where(inf, 1.0, df), -t))
    return np.clip(p, 0.0, 1.0)


def _split(M: ExpressionMatrix, y: PhenotypeLabels):
    y = y.aligned_to(M.sample_ids)
    if y.n_positive < 2 or y.n_negative < 2:
        raise DegenerateLabelsError(
            f"each class needs >= 2 samples (got {y.n_positive} positive, {y.n_negative} negative)"
        )
    return M.values[:, y.labels], M.values[:, ~y.labels]


def welch_t(M: ExpressionMatrix, y: PhenotypeLabels) -> FeatureStats:
    """Welch's two-sided t-test, positive class minus negative class."""
    x1, x2 = _split(M, y)
    n1, n2 = x1.shape[1], x2.shape[1]
    v1 = x1.var(axis=1, ddof=1) / n1
    v2 = x2.var(axis=1, ddof=1) / n2
    se2 = v1 + v2
    diff = x1.mean(axis=1) - x2.mean(axis=1)
    flat = se2 == 0
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(flat, 0.0, diff / np.sqrt(se2))
        df = np.where(flat, n1 + n2 - 2.0, se2**2 / (v1**2 / (n1 - 1) + v2**2 / (n2 - 1)))
    p = np.where(flat, 1.0, two_sided_p(t, df))
    if flat.any():
        log.info("welch_t: %d zero-variance feature(s) given p = 1", flat.sum())
    return FeatureStats(list(M.feature_ids), t, df, p, flagged=flat)


def trigamma_inverse(x: float, tol: float = 1e-8, max_iter: int = 50) -> float:
    """Solve ``trigamma(y) = x`` for y > 0 by Newton's method (Smyth 2004)."""
    x = float(x)
    if x <= 0:
        raise ValueError("trigamma_inverse needs x > 0")
    if x > 1e7:
        return 1.0 / np.sqrt(x)
    if x < 1e-6:
        return 1.0 / x
    y = 0.5 + 1.0 / x
    for _ in range(max_iter):
        tri = special.polygamma(1, y)
        dif = tri * (1.0 - tri / x) / special.polygamma(2, y)
        y += dif
        if -dif / y < tol:
            break
    else:
        log.warning("trigamma_inverse: Newton iteration did not converge")
    return float(y)


def fit_prior_variance(s2: np.ndarray, df: float) -> tuple[float, float]:
    """Moment-matching estimate of the scaled inverse-chi-square prior ``(d0, s0^2)``.

    ``log s^2`` is centred by its expected value under a scaled F
    distribution; its excess variance over ``trigamma(df/2)`` gives ``d0``.
    Returns ``d0 = inf`` when there is no excess variance.
    """
    s2 = np.asarray(s2, dtype=float)
    if s2.size < 3:
        raise DataError("moderated t needs at least 3 features to estimate the prior")
    if not np.any(s2 > 0):
        raise DataError("every feature has zero variance")
    # guard log(0) the same way limma does
    med = np.median(s2)
    if med == 0:
        med = 1.0
    s2 = np.maximum(s2, 1e-5 * med)
    e = np.log(s2) - special.digamma(df / 2) + np.log(df / 2)
    emean = e.mean()
    evar = np.sum((e - emean) ** 2) / (e.size - 1) - special.polygamma(1, df / 2)
    if evar > 0:
        d0 = 2.0 * trigamma_inverse(evar)
        s02 = float(np.exp(emean + special.digamma(d0 / 2) - np.log(d0 / 2)))
    else:
        d0, s02 = np.inf, float(np.exp(emean))
    return d0, s02


def moderated_t(M: ExpressionMatrix, y: PhenotypeLabels, *, shrink: bool = True) -> FeatureStats:
    """Empirical-Bayes moderated t-statistic (two groups, pooled variance).

    With ``shrink=False`` the prior is disabled (``d0 = 0``) and the result is
    the ordinary equal-variance t-test.
    """
    x1, x2 = _split(M, y)
    n1, n2 = x1.shape[1], x2.shape[1]
    d = n1 + n2 - 2
    ss = ((x1 - x1.mean(axis=1, keepdims=True)) ** 2).sum(axis=1) + (
        (x2 - x2.mean(axis=1, keepdims=True)) ** 2
    ).sum(axis=1)
    s2 = ss / d
    diff = x1.mean(axis=1) - x2.mean(axis=1)
    if shrink:
        d0, s02 = fit_prior_variance(s2, d)
    else:
        d0, s02 = 0.0, 0.0
    if np.isinf(d0):
        post = np.full_like(s2, s02)
        df_total = np.inf
    else:
        post = (d0 * s02 + d * s2) / (d0 + d)
        df_total = d0 + d
    flat = post == 0
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(flat, 0.0, diff / np.sqrt(post * (1.0 / n1 + 1.0 / n2)))
    p = np.where(flat, 1.0, two_sided_p(t, df_total))
    return FeatureStats(
        list(M.feature_ids), t, np.full_like(t, df_total), p,
        flagged=flat, prior_df=d0, prior_var=s02,
    )


def select_top_k(stats: FeatureStats, k: int) -> list[str]:
    """The ``k`` feature ids with the smallest p-values.

    Ties on p are broken by feature id, then by input position.
    """
    if k < 1:
        raise DataError(f"k must be positive, got {k}")
    if k > len(stats):
        raise DataError(f"k = {k} exceeds the {len(stats)} available features")
    ids = np.array(stats.feature_ids, dtype=str)
    order = np.lexsort((np.arange(len(ids)), ids, np.asarray(stats.p)))
    return [stats.feature_ids[i] for i in order[:k]]
